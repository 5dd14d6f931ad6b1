#include "fcas/advisor_remote.hpp"

#include <chrono>
#include <cstdlib>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "fcas/errors.hpp"

namespace fcas {

namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw InvalidInput("advisor endpoint must start with http:// or https://");
  const std::string s = url.substr(0, scheme);
  if (s != "http" && s != "https") throw InvalidInput("advisor endpoint must start with http:// or https://");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

}  // namespace

RemoteSettings RemoteSettings::from_environment() {
  RemoteSettings s;
  s.endpoint = env_or("FCAS_ADVISOR_ENDPOINT", "");
  if (s.endpoint.empty()) throw InvalidInput("FCAS_ADVISOR_ENDPOINT is not set");
  s.api_key = env_or("FCAS_ADVISOR_API_KEY", "");
  s.model = env_or("FCAS_ADVISOR_MODEL", s.model);
  return s;
}

nlohmann::json chat_body(const PromptBundle& p, const RemoteSettings& settings) {
  nlohmann::json body;
  body["model"] = settings.model;
  body["temperature"] = settings.temperature;
  body["messages"] = nlohmann::json::array(
      {{{"role", "system"}, {"content", p.context}},
       {{"role", "user"}, {"content", p.observation + "\n\n" + p.action_schema + "\n\n" + p.reward}}});
  return body;
}

std::string chat_request(const RemoteSettings& settings, const PromptBundle& prompt) {
  using clock = std::chrono::steady_clock;
  const Url url = split_url(settings.endpoint);
  const auto deadline = clock::now() + std::chrono::duration_cast<clock::duration>(
                                           std::chrono::duration<double>(settings.timeout_seconds));
  const std::string body = chat_body(prompt, settings).dump();
  httplib::Headers headers;
  if (!settings.api_key.empty()) headers.emplace("Authorization", "Bearer " + settings.api_key);

  std::string last_error = "deadline reached before sending";
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto remaining = std::chrono::duration_cast<std::chrono::microseconds>(deadline - clock::now());
    if (remaining.count() <= 0) break;
    httplib::Client client(url.origin);
    client.set_connection_timeout(remaining);
    client.set_read_timeout(remaining);
    client.set_write_timeout(remaining);
    const auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) throw AdvisorUnavailable("HTTP status " + std::to_string(res->status));
    const auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("choices") || !j["choices"].is_array() ||
        j["choices"].empty())
      throw AdvisorUnavailable("completion without choices");
    const auto& choice = j["choices"][0];
    if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object() ||
        !choice["message"].contains("content") || !choice["message"]["content"].is_string())
      throw AdvisorUnavailable("completion choice without message text");
    return choice["message"]["content"].get<std::string>();
  }
  throw AdvisorUnavailable(last_error);
}

RemoteBackend::RemoteBackend(RemoteSettings settings) : settings_(std::move(settings)) {
  split_url(settings_.endpoint);
  if (!(settings_.timeout_seconds > 0.0)) throw InvalidInput("advisor timeout must be positive");
}

BackendReply RemoteBackend::complete(const AdvisorQuery& query) {
  BackendReply reply;
  reply.request = chat_body(query.prompt, settings_);
  reply.text = chat_request(settings_, query.prompt);
  return reply;
}

}  // namespace fcas
