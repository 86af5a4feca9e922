// SPDX-License-Identifier: Apache-2.0
#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "lipcmd/error.hpp"
#include "lipcmd/session.hpp"

namespace lipcmd {

namespace {

class Fd {
 public:
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  int get() const { return fd_; }

 private:
  int fd_;
};

[[noreturn]] void sys_fail(const std::string& what) {
  throw Error(Errc::IoError, what + ": " + std::strerror(errno));
}

bool write_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace

void run_stream(Session& session, std::istream& in, std::ostream& out) {
  std::string line;
  while (!session.closed() && std::getline(in, line)) {
    for (const auto& reply : session.handle_line(line)) out << reply << '\n';
    out.flush();
  }
  session.close();
}

void serve_tcp(Session& session, std::uint16_t port, const std::function<void(std::uint16_t)>& on_listening) {
  Fd listener(::socket(AF_INET, SOCK_STREAM, 0));
  if (listener.get() < 0) sys_fail("socket");
  const int yes = 1;
  ::setsockopt(listener.get(), SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listener.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) sys_fail("bind");
  if (::listen(listener.get(), 1) < 0) sys_fail("listen");
  socklen_t len = sizeof addr;
  ::getsockname(listener.get(), reinterpret_cast<sockaddr*>(&addr), &len);
  if (on_listening) on_listening(ntohs(addr.sin_port));

  Fd client(::accept(listener.get(), nullptr, nullptr));
  if (client.get() < 0) sys_fail("accept");

  std::string buffer;
  char chunk[65536];
  while (!session.closed()) {
    const ssize_t n = ::recv(client.get(), chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (std::size_t nl; !session.closed() && (nl = buffer.find('\n', start)) != std::string::npos; start = nl + 1) {
      std::string reply;
      for (const auto& r : session.handle_line(std::string_view(buffer).substr(start, nl - start))) {
        reply += r;
        reply += '\n';
      }
      if (!reply.empty() && !write_all(client.get(), reply)) {
        session.close();
        return;
      }
    }
    buffer.erase(0, start);
  }
  session.close();
}

}  // namespace lipcmd
