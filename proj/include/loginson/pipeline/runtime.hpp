#pragma once

#include "loginson/net.hpp"
#include "loginson/pipeline/processing.hpp"
#include "loginson/pipeline/spec.hpp"
#include "loginson/record.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <sys/types.h>

namespace loginson::pipeline {

using LineFn = std::function<void(std::string_view)>;

struct ExternalOptions {
    std::chrono::milliseconds backoff_initial{50};
    std::chrono::milliseconds backoff_max{2000};
    int crash_limit = 3;
    std::chrono::seconds crash_window{60};
};

/// A `/bin/sh -c command` child fed one line per record on stdin; every line
/// it prints on stdout goes to on_line (called from a reader thread). A child
/// that exits is restarted with backoff; crash_limit exits inside
/// crash_window disable the stage.
class ExternalProcess {
public:
    /// Throws Error{SpawnFailed}.
    ExternalProcess(std::string command, LineFn on_line, ExternalOptions opts = {});
    ~ExternalProcess();
    ExternalProcess(const ExternalProcess&) = delete;
    ExternalProcess& operator=(const ExternalProcess&) = delete;

    /// Returns false once the stage is disabled.
    bool write_line(std::string_view line);
    /// Closes the child's stdin and waits for its output to end.
    void close_and_drain(std::chrono::milliseconds timeout = std::chrono::seconds(10));

    bool disabled() const noexcept { return disabled_.load(); }
    std::uint64_t restarts() const noexcept { return restarts_.load(); }
    std::uint64_t crashes() const noexcept { return crashes_.load(); }
    std::uint64_t lines_dropped() const noexcept { return dropped_.load(); }
    pid_t pid() const;

private:
    struct Child {
        pid_t pid = -1;
        int in_fd = -1;
        int out_fd = -1;
        bool exited = false;
        std::thread reader;
    };

    void spawn();
    void stop_child(std::chrono::milliseconds timeout);
    void reap(bool crashed);

    std::string command_;
    LineFn on_line_;
    ExternalOptions opts_;
    mutable std::mutex mu_;
    Child child_;
    std::deque<std::chrono::steady_clock::time_point> crash_times_;
    std::atomic<bool> disabled_{false};
    std::atomic<std::uint64_t> restarts_{0};
    std::atomic<std::uint64_t> crashes_{0};
    std::atomic<std::uint64_t> dropped_{0};
};

struct PipelineCounters {
    std::uint64_t processed = 0;
    std::uint64_t filtered_out = 0;
    std::uint64_t late = 0;
    std::uint64_t emitted = 0;
};

/// One log type's stage chain. Output lines (normally JSON) go to `out`,
/// which must be safe to call from the external stage's reader thread.
///
/// Without a Parse stage, Serialize emits the payload as a "message" field.
/// An External stage reads the serialized line when it follows Serialize or
/// Window, otherwise the raw payload.
class Pipeline {
public:
    Pipeline(const PipelineSpec& spec, std::string index_name, LineFn out, ExternalOptions ext = {});
    ~Pipeline();

    void process(std::uint64_t ts_ns, std::string_view payload);
    /// Closes the open window once now_ns is past its end.
    void tick(std::uint64_t now_ns);
    /// Emits the open window now.
    void flush_window();
    /// Emits the open window and drains the external child.
    void finish();

    const std::string& index_name() const noexcept { return index_; }
    PipelineCounters counters() const;
    const ExternalProcess* external() const noexcept { return external_.get(); }

private:
    void emit_summaries(std::vector<SummaryRecord> recs);
    void emit_line(std::string_view line);

    PipelineSpec spec_;
    std::string index_;
    LineFn out_;
    std::size_t window_pos_ = SIZE_MAX;
    std::unique_ptr<WindowState> window_;
    std::unique_ptr<ExternalProcess> external_;
    std::atomic<std::uint64_t> processed_{0}, filtered_{0}, late_{0}, emitted_{0};
    bool finished_ = false;
};

/// Newline-delimited JSON over TCP to the receptor, reconnecting on failure.
/// In live mode lines are dropped (counted) while disconnected; in blocking
/// mode send() retries until block_timeout.
class ReceptorClient {
public:
    ReceptorClient(net::Endpoint ep, bool blocking = false,
                   std::chrono::milliseconds block_timeout = std::chrono::seconds(30));

    bool send(std::string_view line);
    std::uint64_t sent() const noexcept { return sent_.load(); }
    std::uint64_t dropped() const noexcept { return dropped_.load(); }
    bool connected() const;

private:
    bool try_send_locked(std::string_view line);

    net::Endpoint ep_;
    bool blocking_;
    std::chrono::milliseconds block_timeout_;
    mutable std::mutex mu_;
    net::TcpStream stream_;
    std::chrono::steady_clock::time_point next_attempt_{};
    std::string buf_;
    std::atomic<std::uint64_t> sent_{0}, dropped_{0};
};

struct ExecutorStats {
    std::string type_name;
    std::uint64_t offered = 0;
    std::uint64_t tee_dropped = 0;
    std::size_t queued = 0;
    PipelineCounters pipeline;
    bool external_disabled = false;
};

/// Owns one type's live Pipeline on a worker thread. offer() never blocks:
/// when the bounded queue is full the record is dropped from the tee.
class PipelineExecutor {
public:
    PipelineExecutor(const PipelineSpec& spec, LineFn out, std::size_t capacity = 65536,
                     std::chrono::milliseconds window_grace = std::chrono::seconds(1), ExternalOptions ext = {});
    ~PipelineExecutor();

    bool offer(std::uint64_t ts_ns, std::string_view payload);
    /// Waits until the queue is empty and processed, then optionally closes the
    /// open window.
    void drain(bool close_window, std::chrono::milliseconds timeout = std::chrono::seconds(10));
    void stop();
    ExecutorStats stats() const;

private:
    void run();

    std::string type_name_;
    std::size_t capacity_;
    std::chrono::milliseconds grace_;
    std::unique_ptr<Pipeline> pipeline_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable idle_cv_;
    std::deque<std::pair<std::uint64_t, std::string>> queue_;
    bool busy_ = false;
    bool stopping_ = false;
    bool close_requested_ = false;
    std::atomic<std::uint64_t> offered_{0}, dropped_{0};
    std::thread worker_;
};

/// Routes teed records to the executor of their type id.
class PipelineDispatcher {
public:
    PipelineDispatcher(const std::vector<PipelineSpec>& specs, LineFn out, std::size_t capacity = 65536,
                       std::chrono::milliseconds window_grace = std::chrono::seconds(1));
    void offer(const RecordView& rec);
    void drain(bool close_window, std::chrono::milliseconds timeout = std::chrono::seconds(10));
    void stop();
    std::vector<ExecutorStats> stats() const;
    std::uint64_t unrouted() const noexcept { return unrouted_.load(); }

private:
    std::map<std::uint32_t, std::unique_ptr<PipelineExecutor>> by_type_;
    std::atomic<std::uint64_t> unrouted_{0};
};

/// Reads `{"pipelines": [...]}` from a file.
std::vector<PipelineSpec> load_pipeline_file(const std::string& path);

} // namespace loginson::pipeline
