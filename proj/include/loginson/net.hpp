#pragma once

#include "json.hpp"

#include <array>
#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>

namespace loginson::net {

/// Owning file descriptor.
class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) noexcept : fd_(fd) {}
    Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Fd& operator=(Fd&& o) noexcept {
        if (this != &o) {
            reset();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    ~Fd() { reset(); }

    int get() const noexcept { return fd_; }
    bool valid() const noexcept { return fd_ >= 0; }
    void reset() noexcept;
    /// shutdown(2) both directions without closing; unblocks readers.
    void shutdown() noexcept;

private:
    int fd_ = -1;
};

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    std::string to_string() const { return host + ":" + std::to_string(port); }
    /// Parses "host:port"; throws Error{InvalidConfig}.
    static Endpoint parse(std::string_view text);
    friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

class TcpStream {
public:
    TcpStream() = default;
    explicit TcpStream(Fd fd) : fd_(std::move(fd)) {}

    /// Throws Error{SocketError} when the connection cannot be established.
    static TcpStream connect(const Endpoint& ep, std::chrono::milliseconds timeout = std::chrono::seconds(2));

    bool valid() const noexcept { return fd_.valid(); }
    int fd() const noexcept { return fd_.get(); }

    /// Throws Error{SocketError} on failure.
    void write_all(std::span<const std::uint8_t> data);
    void write_all(std::string_view data) {
        write_all(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
    }
    /// Returns bytes read; 0 on orderly close. Throws on error.
    std::size_t read_some(std::span<std::uint8_t> buf);
    /// Returns false on orderly close before any byte; throws on short read.
    bool read_exact(std::span<std::uint8_t> buf);
    /// Waits for readability; false on timeout.
    bool wait_readable(std::chrono::milliseconds timeout) const;

    void set_nodelay(bool on);
    void set_send_buffer(int bytes);
    void set_recv_buffer(int bytes);
    void shutdown() noexcept { fd_.shutdown(); }
    void close() noexcept { fd_.reset(); }

private:
    Fd fd_;
};

class TcpListener {
public:
    /// Binds host:port (port 0 picks an ephemeral port). Throws Error{SocketError}.
    explicit TcpListener(const Endpoint& ep);

    std::uint16_t port() const noexcept { return port_; }
    /// Returns nullopt on timeout or after close().
    std::optional<TcpStream> accept(std::chrono::milliseconds timeout);
    void close() noexcept { fd_.shutdown(); fd_.reset(); }

private:
    Fd fd_;
    std::uint16_t port_ = 0;
};

class UdpSocket {
public:
    /// Bound receiver; requests a large receive buffer.
    static UdpSocket bind(const Endpoint& ep, int recv_buffer_bytes = 32 << 20);
    /// Unbound sender.
    static UdpSocket sender();

    std::uint16_t port() const noexcept { return port_; }
    int fd() const noexcept { return fd_.get(); }

    /// Throws Error{SocketError}; returns false when the send would block.
    bool send_to(const Endpoint& ep, std::span<const std::uint8_t> data);
    /// One sendmmsg call; returns how many leading datagrams were sent (0 when
    /// the send would block). Throws Error{SocketError}.
    std::size_t send_batch(const Endpoint& ep, std::span<const std::span<const std::uint8_t>> datagrams);
    void close() noexcept { fd_.reset(); }

private:
    Fd fd_;
    std::uint16_t port_ = 0;
};

/// Length-prefixed JSON messages: 4-byte little-endian length then UTF-8 JSON.
void write_message(TcpStream& s, const nlohmann::json& msg);
/// Returns nullopt when the peer closed cleanly before a new message.
std::optional<nlohmann::json> read_message(TcpStream& s);

} // namespace loginson::net
