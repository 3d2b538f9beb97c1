#include "loginson/receptor/bulk.hpp"

#include "loginson/error.hpp"

#include "httplib.h"

#include <iostream>

namespace loginson::receptor {

BulkOptions BulkOptions::from_json(const nlohmann::json& j) {
    BulkOptions o;
    o.url = j.at("url").get<std::string>();
    o.headers = j.value("headers", o.headers);
    o.max_docs = j.value("max_docs", o.max_docs);
    o.max_delay = std::chrono::milliseconds(j.value("max_delay_ms", o.max_delay.count()));
    o.max_buffered_batches = j.value("max_buffered_batches", o.max_buffered_batches);
    return o;
}

std::string BulkBatch::body() const {
    std::string out = "{\"index\":" + nlohmann::json(index).dump() + "}\n";
    for (const auto& d : docs) {
        out += d;
        out += '\n';
    }
    return out;
}

BulkForwarder::BulkForwarder(BulkOptions opts) : opts_(std::move(opts)) {
    std::string_view u = opts_.url;
    const std::string_view scheme = "http://";
    if (u.substr(0, scheme.size()) != scheme) throw Error(Errc::InvalidConfig, "bulk sink url must be http://");
    u.remove_prefix(scheme.size());
    const auto slash = u.find('/');
    const std::string_view hostport = u.substr(0, slash);
    path_ = slash == std::string_view::npos ? "/" : std::string(u.substr(slash));
    const auto colon = hostport.rfind(':');
    host_ = std::string(hostport.substr(0, colon));
    if (colon != std::string_view::npos) port_ = std::stoi(std::string(hostport.substr(colon + 1)));
    if (opts_.max_docs == 0 || opts_.max_buffered_batches == 0) {
        throw Error(Errc::InvalidConfig, "bulk max_docs and max_buffered_batches must be positive");
    }
    worker_ = std::thread([this] { run(); });
}

BulkForwarder::~BulkForwarder() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    worker_.join();
}

void BulkForwarder::seal_locked(std::map<std::string, BulkBatch>::iterator it) {
    ready_.push_back(std::move(it->second));
    open_.erase(it);
    while (ready_.size() > opts_.max_buffered_batches) {
        // Never drop the batch currently on the wire.
        auto victim = ready_.begin() + (in_flight_ ? 1 : 0);
        if (victim == ready_.end()) break;
        stats_.batches_dropped += 1;
        stats_.docs_dropped += victim->docs.size();
        ready_.erase(victim);
    }
    cv_.notify_all();
}

void BulkForwarder::add(const std::string& index, std::string_view doc) {
    std::lock_guard lock(mu_);
    auto it = open_.find(index);
    if (it == open_.end()) {
        it = open_.emplace(index, BulkBatch{index, {}, std::chrono::steady_clock::now()}).first;
    }
    it->second.docs.emplace_back(doc);
    if (it->second.docs.size() >= opts_.max_docs) seal_locked(it);
}

bool BulkForwarder::post(const BulkBatch& b) {
    httplib::Client cli(host_, port_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(opts_.request_timeout).count();
    cli.set_connection_timeout(std::max<long>(1, static_cast<long>(secs)), 0);
    cli.set_read_timeout(std::max<long>(1, static_cast<long>(secs)), 0);
    httplib::Headers headers(opts_.headers.begin(), opts_.headers.end());
    const auto res = cli.Post(path_, headers, b.body(), "application/x-ndjson");
    return res && res->status >= 200 && res->status < 300;
}

void BulkForwarder::run() {
    auto backoff = opts_.backoff_initial;
    std::unique_lock lock(mu_);
    while (true) {
        const auto now = std::chrono::steady_clock::now();
        for (auto it = open_.begin(); it != open_.end();) {
            auto next = std::next(it);
            if (now - it->second.opened >= opts_.max_delay) seal_locked(it);
            it = next;
        }
        if (ready_.empty()) {
            if (stopping_) break;
            cv_.wait_for(lock, std::chrono::milliseconds(50));
            continue;
        }
        if (stopping_) break;
        in_flight_ = true;
        const BulkBatch batch = ready_.front();
        lock.unlock();
        const bool ok = post(batch);
        lock.lock();
        in_flight_ = false;
        if (ok) {
            stats_.batches_sent += 1;
            stats_.docs_sent += batch.docs.size();
            ready_.pop_front();
            backoff = opts_.backoff_initial;
            cv_.notify_all();
        } else {
            stats_.send_failures += 1;
            cv_.wait_for(lock, backoff, [&] { return stopping_; });
            backoff = std::min(opts_.backoff_max, backoff * 2);
        }
    }
}

bool BulkForwarder::flush(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    while (!open_.empty()) seal_locked(open_.begin());
    return cv_.wait_for(lock, timeout, [&] { return ready_.empty(); });
}

BulkStats BulkForwarder::stats() const {
    std::lock_guard lock(mu_);
    BulkStats s = stats_;
    s.buffered_batches = ready_.size() + open_.size();
    return s;
}

} // namespace loginson::receptor
