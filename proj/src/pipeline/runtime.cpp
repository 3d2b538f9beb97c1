#include "loginson/pipeline/runtime.hpp"

#include "loginson/config.hpp"
#include "loginson/error.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <iostream>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace loginson::pipeline {

namespace {

void ignore_sigpipe_once() {
    static std::once_flag once;
    std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

void close_fd(int& fd) {
    if (fd >= 0) ::close(fd);
    fd = -1;
}

void read_lines(int fd, const LineFn& on_line) {
    std::string pending;
    char buf[65536];
    for (;;) {
        const ssize_t n = ::read(fd, buf, sizeof buf);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        pending.append(buf, static_cast<std::size_t>(n));
        std::size_t start = 0;
        for (std::size_t nl; (nl = pending.find('\n', start)) != std::string::npos; start = nl + 1) {
            on_line(std::string_view(pending).substr(start, nl - start));
        }
        pending.erase(0, start);
    }
    if (!pending.empty()) on_line(pending);
}

} // namespace

ExternalProcess::ExternalProcess(std::string command, LineFn on_line, ExternalOptions opts)
    : command_(std::move(command)), on_line_(std::move(on_line)), opts_(opts) {
    ignore_sigpipe_once();
    std::lock_guard lock(mu_);
    spawn();
}

ExternalProcess::~ExternalProcess() { close_and_drain(std::chrono::seconds(2)); }

void ExternalProcess::spawn() {
    int in[2], out[2];
    if (::pipe2(in, O_CLOEXEC) != 0) throw Error(Errc::SpawnFailed, std::string("pipe: ") + std::strerror(errno));
    if (::pipe2(out, O_CLOEXEC) != 0) {
        ::close(in[0]);
        ::close(in[1]);
        throw Error(Errc::SpawnFailed, std::string("pipe: ") + std::strerror(errno));
    }
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, in[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&fa, out[1], STDOUT_FILENO);
    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    sigset_t defaults, empty;
    sigemptyset(&defaults);
    sigaddset(&defaults, SIGPIPE);
    sigemptyset(&empty);
    posix_spawnattr_setsigdefault(&attr, &defaults);
    posix_spawnattr_setsigmask(&attr, &empty);
    posix_spawnattr_setpgroup(&attr, 0);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETSIGDEF | POSIX_SPAWN_SETSIGMASK | POSIX_SPAWN_SETPGROUP);

    std::string sh = "sh", dash_c = "-c";
    char* argv[] = {sh.data(), dash_c.data(), command_.data(), nullptr};
    pid_t pid = -1;
    const int rc = ::posix_spawn(&pid, "/bin/sh", &fa, &attr, argv, environ);
    posix_spawn_file_actions_destroy(&fa);
    posix_spawnattr_destroy(&attr);
    ::close(in[0]);
    ::close(out[1]);
    if (rc != 0) {
        ::close(in[1]);
        ::close(out[0]);
        throw Error(Errc::SpawnFailed, "spawn '" + command_ + "': " + std::strerror(rc));
    }
    child_.pid = pid;
    child_.in_fd = in[1];
    child_.out_fd = out[0];
    const int fd = out[0];
    child_.reader = std::thread([this, fd] { read_lines(fd, on_line_); });
}

void ExternalProcess::stop_child(std::chrono::milliseconds timeout) {
    close_fd(child_.in_fd);
    if (child_.pid > 0) {
        int status = 0;
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        while (!child_.exited && ::waitpid(child_.pid, &status, WNOHANG) == 0) {
            if (std::chrono::steady_clock::now() > deadline) {
                ::kill(-child_.pid, SIGKILL);
                ::waitpid(child_.pid, &status, 0);
                break;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
        }
        // Anything left in the group would keep the output pipe open.
        ::kill(-child_.pid, SIGKILL);
        child_.pid = -1;
        child_.exited = false;
    }
    if (child_.reader.joinable()) child_.reader.join();
    close_fd(child_.out_fd);
}

void ExternalProcess::reap(bool crashed) {
    stop_child(std::chrono::seconds(2));
    if (!crashed) return;

    crashes_.fetch_add(1);
    const auto now = std::chrono::steady_clock::now();
    crash_times_.push_back(now);
    while (!crash_times_.empty() && now - crash_times_.front() > opts_.crash_window) crash_times_.pop_front();
    if (static_cast<int>(crash_times_.size()) >= opts_.crash_limit) {
        disabled_ = true;
        std::cerr << "pipeline: ALARM " << to_string(Errc::ChildCrashLoop) << ": '" << command_ << "' exited "
                  << crash_times_.size() << " times within " << opts_.crash_window.count()
                  << " s, stage disabled\n";
    }
}

bool ExternalProcess::write_line(std::string_view line) {
    std::lock_guard lock(mu_);
    std::string data;
    data.reserve(line.size() + 1);
    data.append(line);
    data.push_back('\n');
    for (int attempt = 0; attempt < 4; ++attempt) {
        if (disabled_ || child_.in_fd < 0) break;
        int status = 0;
        bool broken = ::waitpid(child_.pid, &status, WNOHANG) == child_.pid;
        if (broken) child_.exited = true;
        std::size_t off = 0;
        while (!broken && off < data.size()) {
            const ssize_t n = ::write(child_.in_fd, data.data() + off, data.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                broken = true;
                break;
            }
            off += static_cast<std::size_t>(n);
        }
        if (!broken) return true;
        reap(true);
        if (disabled_) break;
        const auto shift = std::min<std::size_t>(crash_times_.size() - 1, 16);
        const std::chrono::milliseconds backoff = std::min(opts_.backoff_max, opts_.backoff_initial * (1 << shift));
        std::this_thread::sleep_for(backoff);
        try {
            spawn();
            restarts_.fetch_add(1);
        } catch (const Error& e) {
            std::cerr << "pipeline: " << e.what() << "\n";
            disabled_ = true;
        }
    }
    dropped_.fetch_add(1);
    return false;
}

void ExternalProcess::close_and_drain(std::chrono::milliseconds timeout) {
    std::lock_guard lock(mu_);
    stop_child(timeout);
}

pid_t ExternalProcess::pid() const {
    std::lock_guard lock(mu_);
    return child_.pid;
}

Pipeline::Pipeline(const PipelineSpec& spec, std::string index_name, LineFn out, ExternalOptions ext)
    : spec_(spec), index_(std::move(index_name)), out_(std::move(out)) {
    spec_.validate();
    for (std::size_t i = 0; i < spec_.stages.size(); ++i) {
        if (const auto* w = std::get_if<WindowStage>(&spec_.stages[i])) {
            window_pos_ = i;
            window_ = std::make_unique<WindowState>(*w, index_);
        } else if (const auto* e = std::get_if<ExternalStage>(&spec_.stages[i])) {
            external_ = std::make_unique<ExternalProcess>(
                e->command, [this](std::string_view line) { emit_line(line); }, ext);
        }
    }
}

Pipeline::~Pipeline() {
    if (external_) external_->close_and_drain(std::chrono::seconds(2));
}

void Pipeline::emit_line(std::string_view line) {
    emitted_.fetch_add(1, std::memory_order_relaxed);
    out_(line);
}

void Pipeline::emit_summaries(std::vector<SummaryRecord> recs) {
    for (const auto& r : recs) {
        const std::string line = serialize_record(r);
        if (external_) {
            external_->write_line(line);
        } else {
            emit_line(line);
        }
    }
}

void Pipeline::process(std::uint64_t ts_ns, std::string_view payload) {
    processed_.fetch_add(1, std::memory_order_relaxed);
    static const std::vector<std::string> kMessage{"message"};
    Fields fields;
    bool parsed = false;
    for (const Stage& stage : spec_.stages) {
        if (const auto* p = std::get_if<ParseStage>(&stage)) {
            fields = parse_line(*p, payload);
            parsed = true;
        } else if (const auto* f = std::get_if<FilterStage>(&stage)) {
            if (!apply_filter(f->predicate, fields)) {
                filtered_.fetch_add(1, std::memory_order_relaxed);
                return;
            }
        } else if (std::holds_alternative<WindowStage>(stage)) {
            auto res = window_->update(fields, ts_ns);
            if (res.late) late_.fetch_add(1, std::memory_order_relaxed);
            emit_summaries(std::move(res.emitted));
            return;
        } else if (std::holds_alternative<SerializeStage>(stage)) {
            if (!parsed) {
                fields.names = &kMessage;
                fields.values = {payload};
            }
            const std::string line = serialize_fields(index_, ts_ns, fields);
            if (external_) {
                external_->write_line(line);
            } else {
                emit_line(line);
            }
            return;
        } else if (std::holds_alternative<ExternalStage>(stage)) {
            external_->write_line(payload);
            return;
        }
    }
}

void Pipeline::tick(std::uint64_t now_ns) {
    if (window_) emit_summaries(window_->advance_to(now_ns));
}

void Pipeline::flush_window() {
    if (window_) emit_summaries(window_->emit());
}

void Pipeline::finish() {
    if (finished_) return;
    finished_ = true;
    flush_window();
    if (external_) external_->close_and_drain();
}

PipelineCounters Pipeline::counters() const {
    PipelineCounters c;
    c.processed = processed_.load();
    c.filtered_out = filtered_.load();
    c.late = late_.load();
    c.emitted = emitted_.load();
    return c;
}

ReceptorClient::ReceptorClient(net::Endpoint ep, bool blocking, std::chrono::milliseconds block_timeout)
    : ep_(std::move(ep)), blocking_(blocking), block_timeout_(block_timeout) {}

bool ReceptorClient::connected() const {
    std::lock_guard lock(mu_);
    return stream_.valid();
}

bool ReceptorClient::try_send_locked(std::string_view line) {
    const auto now = std::chrono::steady_clock::now();
    if (!stream_.valid()) {
        if (now < next_attempt_) return false;
        try {
            stream_ = net::TcpStream::connect(ep_, std::chrono::milliseconds(500));
            stream_.set_nodelay(true);
        } catch (const Error&) {
            next_attempt_ = now + std::chrono::milliseconds(500);
            return false;
        }
    }
    buf_.assign(line);
    buf_.push_back('\n');
    try {
        stream_.write_all(buf_);
        return true;
    } catch (const Error&) {
        stream_.close();
        next_attempt_ = now;
        return false;
    }
}

bool ReceptorClient::send(std::string_view line) {
    std::lock_guard lock(mu_);
    const auto deadline = std::chrono::steady_clock::now() + block_timeout_;
    for (;;) {
        if (try_send_locked(line)) {
            sent_.fetch_add(1, std::memory_order_relaxed);
            return true;
        }
        if (!blocking_ || std::chrono::steady_clock::now() >= deadline) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
        next_attempt_ = {};
    }
    dropped_.fetch_add(1, std::memory_order_relaxed);
    return false;
}

PipelineExecutor::PipelineExecutor(const PipelineSpec& spec, LineFn out, std::size_t capacity,
                                   std::chrono::milliseconds window_grace, ExternalOptions ext)
    : type_name_(spec.type_name),
      capacity_(capacity),
      grace_(window_grace),
      pipeline_(std::make_unique<Pipeline>(spec, spec.index_name, std::move(out), ext)) {
    worker_ = std::thread([this] { run(); });
}

PipelineExecutor::~PipelineExecutor() { stop(); }

bool PipelineExecutor::offer(std::uint64_t ts_ns, std::string_view payload) {
    offered_.fetch_add(1, std::memory_order_relaxed);
    {
        std::lock_guard lock(mu_);
        if (stopping_ || queue_.size() >= capacity_) {
            dropped_.fetch_add(1, std::memory_order_relaxed);
            return false;
        }
        queue_.emplace_back(ts_ns, std::string(payload));
    }
    cv_.notify_one();
    return true;
}

void PipelineExecutor::run() {
    std::deque<std::pair<std::uint64_t, std::string>> batch;
    std::unique_lock lock(mu_);
    for (;;) {
        cv_.wait_for(lock, std::chrono::milliseconds(100),
                     [&] { return stopping_ || close_requested_ || !queue_.empty(); });
        const bool stop = stopping_;
        batch.swap(queue_);
        busy_ = true;
        lock.unlock();
        for (const auto& [ts, payload] : batch) pipeline_->process(ts, payload);
        batch.clear();
        const auto grace_ns = static_cast<std::uint64_t>(std::chrono::nanoseconds(grace_).count());
        const std::uint64_t now = now_ns();
        if (now > grace_ns) pipeline_->tick(now - grace_ns);
        lock.lock();
        if (queue_.empty() && close_requested_) {
            lock.unlock();
            pipeline_->flush_window();
            lock.lock();
            close_requested_ = false;
        }
        busy_ = false;
        idle_cv_.notify_all();
        if (stop && queue_.empty()) break;
    }
    lock.unlock();
    pipeline_->finish();
}

void PipelineExecutor::drain(bool close_window, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    if (close_window) close_requested_ = true;
    cv_.notify_one();
    idle_cv_.wait_for(lock, timeout, [&] { return queue_.empty() && !busy_ && !close_requested_; });
}

void PipelineExecutor::stop() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_one();
    if (worker_.joinable()) worker_.join();
}

ExecutorStats PipelineExecutor::stats() const {
    ExecutorStats s;
    s.type_name = type_name_;
    s.offered = offered_.load();
    s.tee_dropped = dropped_.load();
    {
        std::lock_guard lock(mu_);
        s.queued = queue_.size();
    }
    s.pipeline = pipeline_->counters();
    s.external_disabled = pipeline_->external() && pipeline_->external()->disabled();
    return s;
}

PipelineDispatcher::PipelineDispatcher(const std::vector<PipelineSpec>& specs, LineFn out, std::size_t capacity,
                                       std::chrono::milliseconds window_grace) {
    for (const auto& spec : specs) {
        by_type_.emplace(spec.type_id, std::make_unique<PipelineExecutor>(spec, out, capacity, window_grace));
    }
}

void PipelineDispatcher::offer(const RecordView& rec) {
    const auto it = by_type_.find(rec.header.type_id);
    if (it == by_type_.end()) {
        unrouted_.fetch_add(1, std::memory_order_relaxed);
        return;
    }
    it->second->offer(rec.header.ingest_ts_ns, rec.payload);
}

void PipelineDispatcher::drain(bool close_window, std::chrono::milliseconds timeout) {
    for (auto& [_, ex] : by_type_) ex->drain(close_window, timeout);
}

void PipelineDispatcher::stop() {
    for (auto& [_, ex] : by_type_) ex->stop();
}

std::vector<ExecutorStats> PipelineDispatcher::stats() const {
    std::vector<ExecutorStats> out;
    for (const auto& [_, ex] : by_type_) out.push_back(ex->stats());
    return out;
}

std::vector<PipelineSpec> load_pipeline_file(const std::string& path) {
    return load_pipeline_specs(load_json_file(path));
}

} // namespace loginson::pipeline
