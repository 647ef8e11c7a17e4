#pragma once

#include <fcntl.h>
#include <linux/perf_event.h>
#include <poll.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/syscall.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "orps/errors.hpp"

namespace orps::process {

class UniqueFd {
public:
  UniqueFd() = default;
  explicit UniqueFd(int fd) noexcept : fd_(fd) {}
  UniqueFd(UniqueFd&& o) noexcept : fd_(o.release()) {}
  UniqueFd& operator=(UniqueFd&& o) noexcept {
    if (this != &o) reset(o.release());
    return *this;
  }
  UniqueFd(const UniqueFd&) = delete;
  UniqueFd& operator=(const UniqueFd&) = delete;
  ~UniqueFd() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  int release() noexcept { return std::exchange(fd_, -1); }
  void reset(int fd = -1) noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
  }

private:
  int fd_ = -1;
};

struct Pipe {
  UniqueFd read, write;

  static Pipe make() {
    std::array<int, 2> fds{};
    if (::pipe2(fds.data(), O_CLOEXEC) != 0)
      throw ExecutorFault(std::string("pipe2: ") + std::strerror(errno));
    return Pipe{UniqueFd(fds[0]), UniqueFd(fds[1])};
  }
};

// Hardware/software counters attached to a process and inherited by every
// descendant it spawns after attachment.
struct CounterValues {
  std::uint64_t task_clock_ns = 0;
  std::uint64_t instructions = 0;
  std::uint64_t branch_misses = 0;
  std::uint64_t page_faults = 0;
};

class PerfCounters {
public:
  // Opens the counters disabled with enable_on_exec, so counting starts when
  // the target calls exec. Returns nullopt if the core set (task clock,
  // instructions, branch misses) cannot be opened.
  static std::optional<PerfCounters> attach(pid_t pid) {
    PerfCounters pc;
    pc.task_clock_ = open_counter(pid, PERF_TYPE_SOFTWARE, PERF_COUNT_SW_TASK_CLOCK);
    pc.instructions_ = open_counter(pid, PERF_TYPE_HARDWARE, PERF_COUNT_HW_INSTRUCTIONS);
    pc.branch_misses_ = open_counter(pid, PERF_TYPE_HARDWARE, PERF_COUNT_HW_BRANCH_MISSES);
    pc.page_faults_ = open_counter(pid, PERF_TYPE_SOFTWARE, PERF_COUNT_SW_PAGE_FAULTS);
    if (!pc.task_clock_ || !pc.instructions_ || !pc.branch_misses_) return std::nullopt;
    return pc;
  }

  CounterValues read() const {
    CounterValues v;
    v.task_clock_ns = read_scaled(task_clock_);
    v.instructions = read_scaled(instructions_);
    v.branch_misses = read_scaled(branch_misses_);
    v.page_faults = read_scaled(page_faults_);
    return v;
  }

  static bool hardware_available() {
    static const bool available = [] {
      auto fd = open_counter(0, PERF_TYPE_HARDWARE, PERF_COUNT_HW_INSTRUCTIONS, false);
      return static_cast<bool>(fd);
    }();
    return available;
  }

private:
  static UniqueFd open_counter(pid_t pid, std::uint32_t type, std::uint64_t config,
                               bool on_exec = true) {
    for (int exclude_kernel : {0, 1}) {
      perf_event_attr attr{};
      attr.size = sizeof(attr);
      attr.type = type;
      attr.config = config;
      attr.disabled = on_exec ? 1 : 0;
      attr.enable_on_exec = on_exec ? 1 : 0;
      attr.inherit = 1;
      attr.exclude_kernel = static_cast<std::uint64_t>(exclude_kernel);
      attr.exclude_hv = 1;
      attr.read_format = PERF_FORMAT_TOTAL_TIME_ENABLED | PERF_FORMAT_TOTAL_TIME_RUNNING;
      long fd = ::syscall(SYS_perf_event_open, &attr, pid, -1, -1, PERF_FLAG_FD_CLOEXEC);
      if (fd >= 0) return UniqueFd(static_cast<int>(fd));
      if (errno != EACCES && errno != EPERM) break;
    }
    return UniqueFd();
  }

  static std::uint64_t read_scaled(const UniqueFd& fd) {
    if (!fd) return 0;
    std::array<std::uint64_t, 3> buf{};  // value, time_enabled, time_running
    if (::read(fd.get(), buf.data(), sizeof(buf)) != static_cast<ssize_t>(sizeof(buf))) return 0;
    if (buf[2] == 0) return 0;
    if (buf[2] == buf[1]) return buf[0];
    return static_cast<std::uint64_t>(static_cast<long double>(buf[0]) * buf[1] / buf[2]);
  }

  UniqueFd task_clock_, instructions_, branch_misses_, page_faults_;
};

struct SpawnOptions {
  std::vector<std::string> argv;
  std::string stdin_data;
  std::chrono::milliseconds timeout{60000};
  bool attach_counters = false;
  std::size_t max_output_bytes = 16 * 1024 * 1024;
};

struct ProcessResult {
  int exit_code = -1;
  int term_signal = 0;
  bool timed_out = false;
  std::string out;
  std::string err;
  std::int64_t wall_ns = 0;
  std::int64_t minor_faults = 0;
  std::int64_t major_faults = 0;
  std::optional<CounterValues> counters;
};

inline void ignore_sigpipe_once() {
  static std::once_flag flag;
  std::call_once(flag, [] { ::signal(SIGPIPE, SIG_IGN); });
}

// Spawns argv in its own process group, feeds stdin_data, collects both
// output streams and waits. Exceeding the timeout kills the whole group.
// Failure to exec the binary is an ExecutorFault.
inline ProcessResult run(const SpawnOptions& opts) {
  if (opts.argv.empty()) throw ExecutorFault("empty runner command");
  ignore_sigpipe_once();

  std::vector<char*> argv;
  argv.reserve(opts.argv.size() + 1);
  for (const auto& a : opts.argv) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);

  Pipe in = Pipe::make(), out = Pipe::make(), err = Pipe::make();
  Pipe go = Pipe::make(), exec_status = Pipe::make();

  const auto start = std::chrono::steady_clock::now();
  pid_t pid = ::fork();
  if (pid < 0) throw ExecutorFault(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::setpgid(0, 0);
    char byte = 0;
    while (::read(go.read.get(), &byte, 1) < 0 && errno == EINTR) {
    }
    ::dup2(in.read.get(), STDIN_FILENO);
    ::dup2(out.write.get(), STDOUT_FILENO);
    ::dup2(err.write.get(), STDERR_FILENO);
    ::execvp(argv[0], argv.data());
    int e = errno;
    [[maybe_unused]] auto n = ::write(exec_status.write.get(), &e, sizeof(e));
    ::_exit(127);
  }
  ::setpgid(pid, pid);

  std::optional<PerfCounters> counters;
  if (opts.attach_counters) counters = PerfCounters::attach(pid);

  in.read.reset();
  out.write.reset();
  err.write.reset();
  go.read.reset();
  exec_status.write.reset();
  {
    char byte = 1;
    [[maybe_unused]] auto n = ::write(go.write.get(), &byte, 1);
    go.write.reset();
  }

  int exec_errno = 0;
  {
    ssize_t n;
    while ((n = ::read(exec_status.read.get(), &exec_errno, sizeof(exec_errno))) < 0 &&
           errno == EINTR) {
    }
    if (n != static_cast<ssize_t>(sizeof(exec_errno))) exec_errno = 0;
  }

  ProcessResult result;
  const auto deadline = start + opts.timeout;
  auto kill_group = [&] {
    ::kill(-pid, SIGKILL);
    ::kill(pid, SIGKILL);
  };

  ::fcntl(in.write.get(), F_SETFL, O_NONBLOCK);
  std::size_t written = 0;
  if (exec_errno != 0 || opts.stdin_data.empty()) in.write.reset();

  std::array<char, 65536> buf{};
  while (out.read || err.read) {
    std::array<pollfd, 3> fds{};
    nfds_t nfds = 0;
    int out_i = -1, err_i = -1, in_i = -1;
    if (out.read) { out_i = static_cast<int>(nfds); fds[nfds++] = {out.read.get(), POLLIN, 0}; }
    if (err.read) { err_i = static_cast<int>(nfds); fds[nfds++] = {err.read.get(), POLLIN, 0}; }
    if (in.write) { in_i = static_cast<int>(nfds); fds[nfds++] = {in.write.get(), POLLOUT, 0}; }

    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) {
      result.timed_out = true;
      kill_group();
      break;
    }
    int rc = ::poll(fds.data(), nfds, static_cast<int>(std::min<long long>(remaining.count(), 100)));
    if (rc < 0) {
      if (errno == EINTR) continue;
      kill_group();
      throw ExecutorFault(std::string("poll: ") + std::strerror(errno));
    }
    auto drain = [&](int idx, UniqueFd& fd, std::string& sink) {
      if (idx < 0 || !(fds[idx].revents & (POLLIN | POLLHUP | POLLERR))) return;
      ssize_t n = ::read(fd.get(), buf.data(), buf.size());
      if (n > 0) {
        if (sink.size() < opts.max_output_bytes)
          sink.append(buf.data(), std::min<std::size_t>(n, opts.max_output_bytes - sink.size()));
      } else if (n == 0 || (errno != EINTR && errno != EAGAIN)) {
        fd.reset();
      }
    };
    drain(out_i, out.read, result.out);
    drain(err_i, err.read, result.err);
    if (in_i >= 0 && (fds[in_i].revents & (POLLOUT | POLLERR | POLLHUP))) {
      ssize_t n = ::write(in.write.get(), opts.stdin_data.data() + written,
                          opts.stdin_data.size() - written);
      if (n > 0) written += static_cast<std::size_t>(n);
      if ((n < 0 && errno != EAGAIN && errno != EINTR) || written == opts.stdin_data.size())
        in.write.reset();
    }
  }
  in.write.reset();

  int status = 0;
  rusage usage{};
  for (;;) {
    pid_t r = ::wait4(pid, &status, WNOHANG, &usage);
    if (r == pid) break;
    if (r < 0 && errno != EINTR) throw ExecutorFault(std::string("wait4: ") + std::strerror(errno));
    if (std::chrono::steady_clock::now() >= deadline && !result.timed_out) {
      result.timed_out = true;
      kill_group();
    }
    std::this_thread::sleep_for(std::chrono::microseconds(200));
  }
  // Reap any stragglers left in the group.
  ::kill(-pid, SIGKILL);

  result.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  if (WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
  if (WIFSIGNALED(status)) result.term_signal = WTERMSIG(status);
  result.minor_faults = usage.ru_minflt;
  result.major_faults = usage.ru_majflt;
  if (counters) result.counters = counters->read();

  if (exec_errno != 0)
    throw ExecutorFault("cannot execute runner '" + opts.argv.front() + "': " +
                        std::strerror(exec_errno));
  return result;
}

}  // namespace orps::process
