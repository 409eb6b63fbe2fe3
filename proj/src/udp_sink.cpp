#include <netdb.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <iostream>
#include <stdexcept>

#include "crosswise/pipeline.hpp"

namespace crosswise {

std::pair<std::string, int> parse_endpoint(const std::string& endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == endpoint.size())
    throw std::invalid_argument("endpoint must be host:port, got '" + endpoint + "'");
  std::string host = endpoint.substr(0, colon);
  if (host.size() > 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(endpoint.substr(colon + 1), &used);
    if (used != endpoint.size() - colon - 1) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw std::invalid_argument("bad port in endpoint '" + endpoint + "'");
  }
  if (port <= 0 || port > 65535) throw std::invalid_argument("port out of range in '" + endpoint + "'");
  return {host, port};
}

struct UdpAlertSink::Impl {
  int fd = -1;
  sockaddr_storage addr{};
  socklen_t addr_len = 0;
  std::string endpoint;
};

UdpAlertSink::UdpAlertSink(const std::string& endpoint) : impl_(std::make_unique<Impl>()) {
  const auto [host, port] = parse_endpoint(endpoint);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_DGRAM;
  addrinfo* res = nullptr;
  const int rc = getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
  if (rc != 0 || !res) throw std::invalid_argument("cannot resolve " + endpoint + ": " + gai_strerror(rc));
  impl_->fd = socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (impl_->fd < 0) {
    freeaddrinfo(res);
    throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
  }
  std::memcpy(&impl_->addr, res->ai_addr, res->ai_addrlen);
  impl_->addr_len = res->ai_addrlen;
  impl_->endpoint = endpoint;
  freeaddrinfo(res);
}

UdpAlertSink::~UdpAlertSink() {
  if (impl_ && impl_->fd >= 0) close(impl_->fd);
}

bool UdpAlertSink::send(const std::string& payload) {
  int err = 0;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const ssize_t n = sendto(impl_->fd, payload.data(), payload.size(), MSG_DONTWAIT,
                             reinterpret_cast<const sockaddr*>(&impl_->addr), impl_->addr_len);
    if (n == static_cast<ssize_t>(payload.size())) return true;
    err = n < 0 ? errno : EMSGSIZE;
  }
  std::cerr << "alert to " << impl_->endpoint << " dropped after " << kAttempts
            << " attempts: " << std::strerror(err) << '\n';
  return false;
}

}  // namespace crosswise
