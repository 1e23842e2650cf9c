#pragma once

#include <string>
#include <string_view>

#include "groupcap/attention.hpp"

namespace groupcap {

enum class ContrastKind { none, contrast, contrast1, contrast2 };

inline std::string_view to_string(ContrastKind k) {
  switch (k) {
    case ContrastKind::none: return "none";
    case ContrastKind::contrast: return "contrast";
    case ContrastKind::contrast1: return "contrast1";
    case ContrastKind::contrast2: return "contrast2";
  }
  return "?";
}

inline ContrastKind contrast_from_string(std::string_view s) {
  for (auto k : {ContrastKind::none, ContrastKind::contrast, ContrastKind::contrast1, ContrastKind::contrast2})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown contrast variant '" + std::string(s) + "' (none|contrast|contrast1|contrast2)");
}

/// Width of the decoder input for feature dimension d.
inline std::size_t decoder_input_dim(ContrastKind k, std::size_t d) {
  switch (k) {
    case ContrastKind::none: return 2 * d;
    case ContrastKind::contrast: return 4 * d;
    case ContrastKind::contrast1:
    case ContrastKind::contrast2: return 3 * d;
  }
  return 0;
}

/// Whether the variant needs the joint context vector.
inline bool uses_joint_context(ContrastKind k) {
  return k == ContrastKind::contrast || k == ContrastKind::contrast2;
}

/// Mean of F_a applied to the stacked raw features [phi_t; phi_r].
inline Var joint_context(Var phi_t, Var phi_r, const TransformerBlockParams& fa, AttentionRecord* record = nullptr) {
  auto out = transformer_forward(concat_rows({phi_t, phi_r}), fa, nullptr, "joint");
  if (record) *record = std::move(out.record);
  return mean_rows(out.features);
}

/// Mean of the raw stacked features, without attention.
inline Var plain_mean_context(Var phi_t, Var phi_r) { return mean_rows(concat_rows({phi_t, phi_r})); }

/// Decoder input layout:
///   none      [t; r]
///   contrast  [t; r; t - c; r - c]
///   contrast1 [t; r; t - r]
///   contrast2 [t; r; t - c]
inline Var contrastive_features(Var target, Var reference, Var context, ContrastKind kind) {
  const Matrix& tv = target.value();
  if (tv.rows() != 1 || !tv.same_shape(reference.value())) {
    throw DimensionError("contrastive_features: group vectors " + tv.shape() + " and " +
                         reference.value().shape() + " must be equal 1 x d");
  }
  if (uses_joint_context(kind) && (!context.valid() || !tv.same_shape(context.value()))) {
    throw DimensionError("contrastive_features: joint context must be 1 x " + std::to_string(tv.cols()));
  }
  switch (kind) {
    case ContrastKind::none:
      return concat_cols({target, reference});
    case ContrastKind::contrast:
      return concat_cols({target, reference, sub(target, context), sub(reference, context)});
    case ContrastKind::contrast1:
      return concat_cols({target, reference, sub(target, reference)});
    case ContrastKind::contrast2:
      return concat_cols({target, reference, sub(target, context)});
  }
  throw ContractError("contrastive_features: unknown variant");
}

}  // namespace groupcap
