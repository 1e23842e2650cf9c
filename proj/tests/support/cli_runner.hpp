#pragma once

// Runs the groupcap binary in a scratch directory.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace groupcap::check {

namespace fs = std::filesystem;

struct CliResult {
  int status = -1;
  std::string out;
};

/// Runs `GROUPCAP_CLI_PATH args`, capturing stdout (stderr is folded in).
inline CliResult run_cli(const std::string& args, const std::string& env = {}) {
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" GROUPCAP_CLI_PATH "\" " + args + " 2>&1";
  CliResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Fresh directory under the system temp dir, removed on destruction.
struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path = fs::temp_directory_path() / ("groupcap-" + tag + "-" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str(const std::string& child = {}) const { return (child.empty() ? path : path / child).string(); }
};

/// Small but complete settings for end-to-end CLI runs.
inline constexpr const char* kTinyConfig =
    "gen.n_samples=80\n"
    "gen.d=8\n"
    "gen.train_frac=0.8\n"
    "gen.val_frac=0.1\n"
    "gen.test_frac=0.1\n"
    "model.d_ff=16\n"
    "model.hidden=12\n"
    "model.embed=6\n"
    "train.epochs=2\n"
    "train.batch_size=16\n";

}  // namespace groupcap::check
