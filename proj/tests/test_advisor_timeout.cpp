#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>

#include "fcas/advisor_remote.hpp"

using namespace fcas;

TEST_CASE("remote: unresponsive endpoint is reported unavailable at the deadline") {
  // Listening socket that never accepts: the kernel completes the handshake,
  // nobody answers.
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  REQUIRE(::listen(fd, 4) == 0);
  socklen_t len = sizeof addr;
  REQUIRE(::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0);

  RemoteSettings s;
  s.endpoint = "http://127.0.0.1:" + std::to_string(ntohs(addr.sin_port)) + "/v1/chat/completions";
  s.timeout_seconds = 30.0;
  const auto t0 = std::chrono::steady_clock::now();
  CHECK_THROWS_AS(chat_request(s, PromptBundle{"o", "a", "r", "c"}), AdvisorUnavailable);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("elapsed " << elapsed << " s");
  CHECK(elapsed >= 29.0);
  CHECK(elapsed <= 31.0);
  ::close(fd);
}
