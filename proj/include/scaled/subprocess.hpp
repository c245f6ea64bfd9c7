#pragma once

// Spawning helper for the external encoder/decoder: argv-based (no shell),
// optional bytes on stdin, stdout+stderr captured to a log file.

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "scaled/error.hpp"

extern char** environ;

namespace scaled {

struct ProcessResult {
  int exit_code = -1;
  std::string output;  // merged stdout + stderr
};

/// Resolves `name` the way execvp would. Names containing '/' are checked as paths.
inline std::optional<std::filesystem::path> find_executable(const std::string& name) {
  if (name.empty()) return std::nullopt;
  auto runnable = [](const std::filesystem::path& p) { return ::access(p.c_str(), X_OK) == 0 && !std::filesystem::is_directory(p); };
  if (name.find('/') != std::string::npos) {
    if (runnable(name)) return std::filesystem::path(name);
    return std::nullopt;
  }
  const char* path_env = std::getenv("PATH");
  std::string path = path_env ? path_env : "/usr/bin:/bin";
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto end = path.find(':', start);
    const std::string dir = path.substr(start, end == std::string::npos ? std::string::npos : end - start);
    const auto candidate = std::filesystem::path(dir.empty() ? "." : dir) / name;
    if (runnable(candidate)) return candidate;
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return std::nullopt;
}

/// Runs argv[0] with the given stdin bytes; output goes to `log_path`.
inline ProcessResult run_process(const std::vector<std::string>& argv, const std::vector<std::uint8_t>& stdin_bytes,
                                 const std::filesystem::path& log_path) {
  if (argv.empty()) throw CodecError("run_process: empty command");
  int pipe_fds[2];
  if (::pipe2(pipe_fds, O_CLOEXEC) != 0) throw CodecError(std::string("pipe failed: ") + std::strerror(errno));
  const int log_fd = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (log_fd < 0) {
    ::close(pipe_fds[0]);
    ::close(pipe_fds[1]);
    throw CodecError("cannot create log file '" + log_path.string() + "'");
  }

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, pipe_fds[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, log_fd, STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&actions, log_fd, STDERR_FILENO);

  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);

  pid_t pid = 0;
  const int rc = ::posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(pipe_fds[0]);
  ::close(log_fd);
  if (rc != 0) {
    ::close(pipe_fds[1]);
    throw CodecError("cannot start '" + argv[0] + "': " + std::strerror(rc));
  }

  // A child that exits early must not kill us with SIGPIPE.
  static const bool sigpipe_ignored = (std::signal(SIGPIPE, SIG_IGN), true);
  (void)sigpipe_ignored;
  std::size_t written = 0;
  while (written < stdin_bytes.size()) {
    const ssize_t n = ::write(pipe_fds[1], stdin_bytes.data() + written, stdin_bytes.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      break;  // EPIPE: child stopped reading; its exit status tells the story
    }
    written += static_cast<std::size_t>(n);
  }
  ::close(pipe_fds[1]);

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) throw CodecError("waitpid failed for '" + argv[0] + "'");
  }
  ProcessResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  std::ifstream log(log_path);
  result.output.assign(std::istreambuf_iterator<char>(log), {});
  return result;
}

}  // namespace scaled
