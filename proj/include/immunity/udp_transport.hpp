#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace immunity::wire {

// Datagram endpoint carrying encoded frames verbatim between two processes.
class UdpEndpoint {
 public:
  explicit UdpEndpoint(std::uint16_t port = 0, const std::string& bind_addr = "127.0.0.1") {
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (::inet_pton(AF_INET, bind_addr.c_str(), &sa.sin_addr) != 1) {
      ::close(fd_);
      throw std::invalid_argument("bad bind address " + bind_addr);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
      int err = errno;
      ::close(fd_);
      throw std::runtime_error(std::string("bind: ") + std::strerror(err));
    }
  }

  UdpEndpoint(const UdpEndpoint&) = delete;
  UdpEndpoint& operator=(const UdpEndpoint&) = delete;
  UdpEndpoint(UdpEndpoint&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  ~UdpEndpoint() {
    if (fd_ >= 0) ::close(fd_);
  }

  std::uint16_t port() const {
    sockaddr_in sa{};
    socklen_t len = sizeof sa;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len);
    return ntohs(sa.sin_port);
  }

  void send_to(std::span<const std::uint8_t> bytes, std::uint16_t port, const std::string& addr = "127.0.0.1") {
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    ::inet_pton(AF_INET, addr.c_str(), &sa.sin_addr);
    auto n = ::sendto(fd_, bytes.data(), bytes.size(), 0, reinterpret_cast<sockaddr*>(&sa), sizeof sa);
    if (n != static_cast<ssize_t>(bytes.size())) throw std::runtime_error(std::string("sendto: ") + std::strerror(errno));
  }

  std::optional<std::vector<std::uint8_t>> receive(std::chrono::milliseconds timeout) {
    pollfd p{fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc < 0) throw std::runtime_error(std::string("poll: ") + std::strerror(errno));
    if (rc == 0) return std::nullopt;
    std::vector<std::uint8_t> buf(2048);
    auto n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n < 0) throw std::runtime_error(std::string("recv: ") + std::strerror(errno));
    buf.resize(static_cast<std::size_t>(n));
    return buf;
  }

 private:
  int fd_ = -1;
};

}  // namespace immunity::wire
