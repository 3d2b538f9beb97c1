#include "loginson/receptor/receptor.hpp"

#include "loginson/error.hpp"

#include "httplib.h"

#include <sys/socket.h>

#include <charconv>
#include <iostream>

namespace loginson::receptor {

ReceptorConfig ReceptorConfig::from_json(const nlohmann::json& j) {
    ReceptorConfig c;
    c.bind_host = j.value("bind_host", c.bind_host);
    c.ingest_port = j.value("ingest_port", c.ingest_port);
    c.http_port = j.value("http_port", c.http_port);
    c.store.data_dir = j.at("data_dir").get<std::string>();
    c.store.recent_window = j.value("recent_window", c.store.recent_window);
    c.store.max_file_bytes = j.value("max_file_bytes", c.store.max_file_bytes);
    c.queue_lines = j.value("queue_lines", c.queue_lines);
    if (j.contains("bulk") && !j.at("bulk").is_null()) c.bulk = BulkOptions::from_json(j.at("bulk"));
    if (c.queue_lines == 0) throw Error(Errc::InvalidConfig, "queue_lines must be positive");
    return c;
}

Receptor::Receptor(ReceptorConfig config) : config_(std::move(config)) {
    store_ = std::make_unique<IndexStore>(config_.store);
    if (config_.bulk) bulk_ = std::make_unique<BulkForwarder>(*config_.bulk);
}

Receptor::~Receptor() { stop(); }

void Receptor::start() {
    if (running_.exchange(true)) return;
    listener_ = std::make_unique<net::TcpListener>(net::Endpoint{config_.bind_host, config_.ingest_port});
    ingest_port_ = listener_->port();
    setup_http();
    indexer_ = std::thread([this] { indexing_loop(); });
    acceptor_ = std::thread([this] { accept_loop(); });
}

void Receptor::stop() {
    if (!running_.exchange(false)) return;
    acceptor_.join();
    std::vector<std::thread> conns;
    {
        std::lock_guard lock(mu_);
        for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
        conns.swap(conns_);
    }
    space_cv_.notify_all();
    for (auto& t : conns) t.join();
    cv_.notify_all();
    indexer_.join();
    http_->stop();
    http_thread_.join();
    store_->flush();
    if (bulk_) bulk_->flush(std::chrono::seconds(2));
}

void Receptor::submit(std::vector<std::string> lines) {
    if (lines.empty()) return;
    std::unique_lock lock(mu_);
    space_cv_.wait(lock, [&] { return queued_lines_ < config_.queue_lines || !running_.load(); });
    queued_lines_ += lines.size();
    lines_received_.fetch_add(lines.size(), std::memory_order_relaxed);
    queue_.push_back(std::move(lines));
    cv_.notify_one();
}

bool Receptor::sync(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    return idle_cv_.wait_for(lock, timeout, [&] { return queue_.empty() && !busy_; });
}

void Receptor::indexing_loop() {
    std::deque<std::vector<std::string>> work;
    std::string index;
    std::unique_lock lock(mu_);
    for (;;) {
        cv_.wait_for(lock, std::chrono::milliseconds(100), [&] { return !queue_.empty() || !running_.load(); });
        if (queue_.empty()) {
            if (!running_.load()) break;
            continue;
        }
        work.swap(queue_);
        busy_ = true;
        lock.unlock();
        std::size_t n = 0;
        std::uint64_t stored = 0;
        for (auto& batch : work) {
            for (const auto& line : batch) {
                if (store_->ingest(line, bulk_ ? &index : nullptr) == IngestStatus::Stored) {
                    ++stored;
                    if (bulk_) bulk_->add(index, line);
                }
            }
            n += batch.size();
        }
        work.clear();
        store_->flush();
        {
            const auto sec = std::chrono::duration_cast<std::chrono::seconds>(
                                 std::chrono::steady_clock::now().time_since_epoch())
                                 .count();
            std::lock_guard rl(rate_mu_);
            auto& b = rate_[static_cast<std::size_t>(sec) % rate_.size()];
            if (b.second != sec) b = {sec, 0};
            b.docs += stored;
        }
        lock.lock();
        queued_lines_ -= n;
        busy_ = false;
        space_cv_.notify_all();
        idle_cv_.notify_all();
    }
}

void Receptor::accept_loop() {
    while (running_.load()) {
        auto s = listener_->accept(std::chrono::milliseconds(50));
        if (!s) continue;
        connections_.fetch_add(1);
        std::lock_guard lock(mu_);
        open_fds_.push_back(s->fd());
        conns_.emplace_back([this, st = std::move(*s)]() mutable { serve(std::move(st)); });
    }
    listener_->close();
}

void Receptor::serve(net::TcpStream stream) {
    std::vector<std::uint8_t> buf(256 << 10);
    std::string pending;
    try {
        while (running_.load()) {
            const std::size_t n = stream.read_some(buf);
            if (n == 0) break;
            pending.append(reinterpret_cast<const char*>(buf.data()), n);
            std::vector<std::string> lines;
            std::size_t start = 0;
            for (std::size_t nl; (nl = pending.find('\n', start)) != std::string::npos; start = nl + 1) {
                if (nl > start) lines.emplace_back(pending, start, nl - start);
            }
            pending.erase(0, start);
            submit(std::move(lines));
        }
        if (!pending.empty()) submit({pending});
    } catch (const Error&) {
    }
    std::lock_guard lock(mu_);
    open_fds_.erase(std::remove(open_fds_.begin(), open_fds_.end(), stream.fd()), open_fds_.end());
}

namespace {

std::uint64_t param_u64(const httplib::Request& req, const char* key, std::uint64_t dflt) {
    if (!req.has_param(key)) return dflt;
    const auto v = req.get_param_value(key);
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw Error(Errc::InvalidInterval, std::string("bad ") + key);
    return out;
}

void reply_error(httplib::Response& res, const Error& e) {
    int status = 400;
    if (e.code() == Errc::UnknownIndex || e.code() == Errc::NotFound) status = 404;
    res.status = status;
    res.set_content(nlohmann::json{{"error", to_string(e.code())}, {"message", e.what()}}.dump(), "application/json");
}

} // namespace

void Receptor::setup_http() {
    http_ = std::make_unique<httplib::Server>();
    http_->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Methods", "GET, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    http_->Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    http_->Get("/indexes", [this](const httplib::Request&, httplib::Response& res) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& info : store_->list()) {
            nlohmann::json mapping = nlohmann::json::object();
            for (const auto& [k, v] : info.mapping) mapping[k] = to_string(v);
            arr.push_back({{"name", info.name}, {"docs", info.docs}, {"mapping", mapping}});
        }
        res.set_content(nlohmann::json{{"indexes", arr}}.dump(), "application/json");
    });
    http_->Get("/indexes/:name/docs", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            const std::string name = req.path_params.at("name");
            const Interval q{param_u64(req, "from_ts_ns", 0), param_u64(req, "to_ts_ns", UINT64_MAX)};
            const auto limit = static_cast<std::size_t>(param_u64(req, "limit", 1000));
            const std::string order = req.has_param("order") ? req.get_param_value("order") : "asc";
            if (order != "asc" && order != "desc") throw Error(Errc::InvalidConfig, "order must be asc or desc");
            const auto docs = store_->query(name, q, limit, order == "desc" ? Order::Desc : Order::Asc);
            std::string body = "{\"index\":" + nlohmann::json(name).dump() +
                               ",\"count\":" + std::to_string(docs.size()) + ",\"docs\":[";
            for (std::size_t i = 0; i < docs.size(); ++i) {
                if (i) body += ',';
                body += docs[i].json;
            }
            body += "]}";
            res.set_content(body, "application/json");
        } catch (const Error& e) {
            reply_error(res, e);
        }
    });
    http_->Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
        res.set_content(stats_json().dump(), "application/json");
    });
    if (config_.http_port == 0) {
        http_port_ = static_cast<std::uint16_t>(http_->bind_to_any_port(config_.bind_host));
    } else if (http_->bind_to_port(config_.bind_host, config_.http_port)) {
        http_port_ = config_.http_port;
    }
    if (http_port_ == 0) throw Error(Errc::SocketError, "receptor: cannot bind HTTP port");
    http_thread_ = std::thread([this] { http_->listen_after_bind(); });
}

nlohmann::json Receptor::stats_json() const {
    const auto sec =
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::steady_clock::now().time_since_epoch()).count();
    std::uint64_t last_second = 0, last_ten = 0;
    {
        std::lock_guard rl(rate_mu_);
        for (const auto& b : rate_) {
            if (b.second == sec - 1) last_second = b.docs;
            if (b.second >= sec - 10 && b.second < sec) last_ten += b.docs;
        }
    }
    nlohmann::json per_index = nlohmann::json::object();
    for (const auto& info : store_->list()) per_index[info.name] = info.docs;
    nlohmann::json j{{"lines_received", lines_received_.load()},
                     {"docs_stored", store_->stored()},
                     {"malformed", store_->malformed()},
                     {"quarantined", store_->quarantined()},
                     {"ingest_rate", last_second},
                     {"ingest_rate_10s", static_cast<double>(last_ten) / 10.0},
                     {"connections", connections_.load()},
                     {"indexes", per_index}};
    {
        std::lock_guard lock(mu_);
        j["queued_lines"] = queued_lines_;
    }
    if (bulk_) {
        const auto b = bulk_->stats();
        j["bulk"] = {{"batches_sent", b.batches_sent},
                     {"docs_sent", b.docs_sent},
                     {"send_failures", b.send_failures},
                     {"batches_dropped", b.batches_dropped},
                     {"docs_dropped", b.docs_dropped},
                     {"buffered_batches", b.buffered_batches}};
    }
    return j;
}

} // namespace loginson::receptor
