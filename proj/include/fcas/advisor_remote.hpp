#pragma once

#include <string>

#include "fcas/advisor.hpp"

namespace fcas {

struct RemoteSettings {
  std::string endpoint;  // full URL of the chat-completions resource
  std::string api_key;
  std::string model = "gpt-4-turbo";
  double temperature = 0.0;
  double timeout_seconds = 30.0;  // overall deadline including the retry

  // FCAS_ADVISOR_ENDPOINT (required), FCAS_ADVISOR_API_KEY, FCAS_ADVISOR_MODEL.
  static RemoteSettings from_environment();
};

// System message: context. User message: observation, answer schema, reward.
nlohmann::json chat_body(const PromptBundle& prompt, const RemoteSettings& settings);

// Returns the first choice's message text. Retries once on a transport
// error while the deadline allows; throws AdvisorUnavailable otherwise.
std::string chat_request(const RemoteSettings& settings, const PromptBundle& prompt);

class RemoteBackend : public AdvisorBackend {
 public:
  explicit RemoteBackend(RemoteSettings settings);
  BackendReply complete(const AdvisorQuery& query) override;
  std::string name() const override { return "remote"; }

 private:
  RemoteSettings settings_;
};

}  // namespace fcas
