#include "loginson/net.hpp"

#include "loginson/error.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>

namespace loginson::net {

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
    throw Error(Errc::SocketError, what + ": " + std::strerror(errno));
}

sockaddr_in make_addr(const Endpoint& ep) {
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(ep.port);
    const std::string host = ep.host.empty() || ep.host == "localhost" ? "127.0.0.1" : ep.host;
    if (inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1) {
        addrinfo hints{};
        hints.ai_family = AF_INET;
        addrinfo* res = nullptr;
        if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
            throw Error(Errc::SocketError, "cannot resolve host " + host);
        }
        sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
        freeaddrinfo(res);
    }
    return sa;
}

std::uint16_t bound_port(int fd) {
    sockaddr_in sa{};
    socklen_t len = sizeof sa;
    if (getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len) != 0) {
        throw_errno("getsockname");
    }
    return ntohs(sa.sin_port);
}

} // namespace

void Fd::reset() noexcept {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

void Fd::shutdown() noexcept {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
    }
}

Endpoint Endpoint::parse(std::string_view text) {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon + 1 == text.size()) {
        throw Error(Errc::InvalidConfig, "expected host:port, got '" + std::string(text) + "'");
    }
    Endpoint ep;
    ep.host = std::string(text.substr(0, colon));
    int port = 0;
    try {
        port = std::stoi(std::string(text.substr(colon + 1)));
    } catch (const std::exception&) {
        port = -1;
    }
    if (port < 0 || port > 65535) {
        throw Error(Errc::InvalidConfig, "bad port in '" + std::string(text) + "'");
    }
    ep.port = static_cast<std::uint16_t>(port);
    return ep;
}

TcpStream TcpStream::connect(const Endpoint& ep, std::chrono::milliseconds timeout) {
    Fd fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
    if (!fd.valid()) throw_errno("socket");
    const sockaddr_in sa = make_addr(ep);
    if (::connect(fd.get(), reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0) {
        if (errno != EINPROGRESS) throw_errno("connect " + ep.to_string());
        pollfd p{fd.get(), POLLOUT, 0};
        if (::poll(&p, 1, static_cast<int>(timeout.count())) <= 0) {
            throw Error(Errc::SocketError, "connect " + ep.to_string() + ": timeout");
        }
        int err = 0;
        socklen_t len = sizeof err;
        getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) {
            errno = err;
            throw_errno("connect " + ep.to_string());
        }
    }
    const int flags = fcntl(fd.get(), F_GETFL);
    fcntl(fd.get(), F_SETFL, flags & ~O_NONBLOCK);
    TcpStream s(std::move(fd));
    s.set_nodelay(true);
    return s;
}

void TcpStream::write_all(std::span<const std::uint8_t> data) {
    std::size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = ::send(fd_.get(), data.data() + off, data.size() - off, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw_errno("send");
        }
        off += static_cast<std::size_t>(n);
    }
}

std::size_t TcpStream::read_some(std::span<std::uint8_t> buf) {
    for (;;) {
        const ssize_t n = ::recv(fd_.get(), buf.data(), buf.size(), 0);
        if (n >= 0) return static_cast<std::size_t>(n);
        if (errno == EINTR) continue;
        throw_errno("recv");
    }
}

bool TcpStream::read_exact(std::span<std::uint8_t> buf) {
    std::size_t off = 0;
    while (off < buf.size()) {
        const std::size_t n = read_some(buf.subspan(off));
        if (n == 0) {
            if (off == 0) return false;
            throw Error(Errc::SocketError, "connection closed mid-message");
        }
        off += n;
    }
    return true;
}

bool TcpStream::wait_readable(std::chrono::milliseconds timeout) const {
    pollfd p{fd_.get(), POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (r < 0 && errno != EINTR) throw_errno("poll");
    return r > 0;
}

void TcpStream::set_nodelay(bool on) {
    const int v = on ? 1 : 0;
    setsockopt(fd_.get(), IPPROTO_TCP, TCP_NODELAY, &v, sizeof v);
}

void TcpStream::set_send_buffer(int bytes) {
    setsockopt(fd_.get(), SOL_SOCKET, SO_SNDBUF, &bytes, sizeof bytes);
}

void TcpStream::set_recv_buffer(int bytes) {
    setsockopt(fd_.get(), SOL_SOCKET, SO_RCVBUF, &bytes, sizeof bytes);
}

TcpListener::TcpListener(const Endpoint& ep) {
    fd_ = Fd(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd_.valid()) throw_errno("socket");
    const int one = 1;
    setsockopt(fd_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    const sockaddr_in sa = make_addr(ep);
    if (::bind(fd_.get(), reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0) {
        throw_errno("bind " + ep.to_string());
    }
    if (::listen(fd_.get(), 64) != 0) throw_errno("listen");
    port_ = bound_port(fd_.get());
}

std::optional<TcpStream> TcpListener::accept(std::chrono::milliseconds timeout) {
    if (!fd_.valid()) return std::nullopt;
    pollfd p{fd_.get(), POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (r <= 0 || !(p.revents & POLLIN)) return std::nullopt;
    const int c = ::accept4(fd_.get(), nullptr, nullptr, SOCK_CLOEXEC);
    if (c < 0) return std::nullopt;
    TcpStream s{Fd(c)};
    s.set_nodelay(true);
    return s;
}

UdpSocket UdpSocket::bind(const Endpoint& ep, int recv_buffer_bytes) {
    UdpSocket u;
    u.fd_ = Fd(::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0));
    if (!u.fd_.valid()) throw_errno("socket");
    // SO_RCVBUFFORCE ignores rmem_max when privileged; fall back silently.
    if (setsockopt(u.fd_.get(), SOL_SOCKET, SO_RCVBUFFORCE, &recv_buffer_bytes, sizeof recv_buffer_bytes) != 0) {
        setsockopt(u.fd_.get(), SOL_SOCKET, SO_RCVBUF, &recv_buffer_bytes, sizeof recv_buffer_bytes);
    }
    const sockaddr_in sa = make_addr(ep);
    if (::bind(u.fd_.get(), reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0) {
        throw_errno("bind udp " + ep.to_string());
    }
    u.port_ = bound_port(u.fd_.get());
    return u;
}

UdpSocket UdpSocket::sender() {
    UdpSocket u;
    u.fd_ = Fd(::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0));
    if (!u.fd_.valid()) throw_errno("socket");
    int big = 8 << 20;
    if (setsockopt(u.fd_.get(), SOL_SOCKET, SO_SNDBUFFORCE, &big, sizeof big) != 0) {
        setsockopt(u.fd_.get(), SOL_SOCKET, SO_SNDBUF, &big, sizeof big);
    }
    return u;
}

bool UdpSocket::send_to(const Endpoint& ep, std::span<const std::uint8_t> data) {
    const sockaddr_in sa = make_addr(ep);
    for (;;) {
        const ssize_t n = ::sendto(fd_.get(), data.data(), data.size(), 0,
                                   reinterpret_cast<const sockaddr*>(&sa), sizeof sa);
        if (n >= 0) return true;
        if (errno == EINTR) continue;
        if (errno == EAGAIN || errno == ENOBUFS) return false;
        throw_errno("sendto " + ep.to_string());
    }
}

std::size_t UdpSocket::send_batch(const Endpoint& ep, std::span<const std::span<const std::uint8_t>> datagrams) {
    constexpr std::size_t kMax = 64;
    const sockaddr_in sa = make_addr(ep);
    std::array<mmsghdr, kMax> msgs{};
    std::array<iovec, kMax> iovs{};
    const std::size_t n = std::min(kMax, datagrams.size());
    for (std::size_t i = 0; i < n; ++i) {
        iovs[i] = {const_cast<std::uint8_t*>(datagrams[i].data()), datagrams[i].size()};
        msgs[i].msg_hdr.msg_name = const_cast<sockaddr_in*>(&sa);
        msgs[i].msg_hdr.msg_namelen = sizeof sa;
        msgs[i].msg_hdr.msg_iov = &iovs[i];
        msgs[i].msg_hdr.msg_iovlen = 1;
    }
    for (;;) {
        const int sent = ::sendmmsg(fd_.get(), msgs.data(), static_cast<unsigned>(n), 0);
        if (sent >= 0) return static_cast<std::size_t>(sent);
        if (errno == EINTR) continue;
        if (errno == EAGAIN || errno == ENOBUFS) return 0;
        throw_errno("sendmmsg " + ep.to_string());
    }
}

void write_message(TcpStream& s, const nlohmann::json& msg) {
    const std::string body = msg.dump();
    std::string out(4, '\0');
    const auto len = static_cast<std::uint32_t>(body.size());
    for (int i = 0; i < 4; ++i) out[i] = static_cast<char>(len >> (8 * i));
    out += body;
    s.write_all(out);
}

std::optional<nlohmann::json> read_message(TcpStream& s) {
    std::array<std::uint8_t, 4> len_bytes{};
    if (!s.read_exact(len_bytes)) return std::nullopt;
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(len_bytes[i]) << (8 * i);
    if (len > (64u << 20)) {
        throw Error(Errc::SocketError, "control message too large: " + std::to_string(len));
    }
    std::string body(len, '\0');
    if (len > 0 && !s.read_exact(std::span<std::uint8_t>(reinterpret_cast<std::uint8_t*>(body.data()), len))) {
        throw Error(Errc::SocketError, "connection closed mid-message");
    }
    return nlohmann::json::parse(body);
}

} // namespace loginson::net
