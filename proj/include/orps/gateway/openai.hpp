#pragma once

// OpenAI-compatible chat-completions client (works against vLLM, TGI's
// OpenAI route, llama.cpp server and the hosted API).

#include <chrono>
#include <cstdlib>
#include <string>
#include <vector>

#include <httplib.h>

#include "orps/errors.hpp"
#include "orps/gateway/chat.hpp"
#include "orps/util/json_io.hpp"
#include "orps/util/text.hpp"

namespace orps {

struct EndpointConfig {
  std::string base_url = "http://localhost:8000/v1";
  std::string model;
  std::string api_key;  // from ORPS_API_KEY
  std::chrono::seconds timeout{600};
};

class OpenAIBackend : public ModelBackend {
public:
  explicit OpenAIBackend(EndpointConfig cfg) : cfg_(std::move(cfg)) {
    auto scheme_end = cfg_.base_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint base_url needs a scheme");
    auto path_start = cfg_.base_url.find('/', scheme_end + 3);
    host_ = cfg_.base_url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? "" : cfg_.base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    if (cfg_.model.empty()) throw ConfigError("endpoint model name not configured");
  }

  std::vector<Completion> complete(const ChatRequest& request) override {
    std::vector<Completion> out;
    // Some servers ignore "n"; keep asking for the remainder, bounded.
    for (int call = 0; call < request.n && static_cast<int>(out.size()) < request.n; ++call) {
      auto batch = post(request, request.n - static_cast<int>(out.size()), call);
      if (batch.empty()) break;
      for (auto& c : batch) out.push_back(std::move(c));
    }
    if (out.empty()) throw TransientError("endpoint returned no choices");
    return out;
  }

private:
  std::vector<Completion> post(const ChatRequest& request, int n, int call) {
    json messages = json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    json body{{"model", cfg_.model},
              {"messages", std::move(messages)},
              {"n", n},
              {"max_tokens", request.max_new_tokens},
              {"temperature", request.temperature},
              {"seed", static_cast<std::int64_t>((request.seed + static_cast<std::uint64_t>(call)) & 0x7fffffff)}};

    httplib::Client client(host_);
    client.set_connection_timeout(std::chrono::seconds(30));
    client.set_read_timeout(cfg_.timeout);
    client.set_write_timeout(std::chrono::seconds(60));
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(prefix_ + "/chat/completions", headers, dump_json(body), "application/json");
    const double latency = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    if (!res) throw TransientError("transport error: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
      throw TransientError("HTTP " + std::to_string(res->status));
    if (res->status == 400 || res->status == 413) {
      std::string lower = res->body;
      for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      if (lower.find("context") != std::string::npos || lower.find("too long") != std::string::npos ||
          lower.find("maximum") != std::string::npos || res->status == 413)
        throw ContextOverflow("endpoint rejected prompt length: " + text::truncate_utf8(res->body, 300));
    }
    if (res->status != 200)
      throw GatewayUnavailable("HTTP " + std::to_string(res->status) + ": " + text::truncate_utf8(res->body, 300));

    json doc;
    try {
      doc = json::parse(res->body);
    } catch (const json::exception& e) {
      throw TransientError(std::string("malformed response body: ") + e.what());
    }
    std::vector<Completion> out;
    const auto& choices = doc.value("choices", json::array());
    const auto usage = doc.value("usage", json::object());
    const TokenCount prompt_tokens = usage.value("prompt_tokens", estimate_prompt_tokens(request.messages));
    const TokenCount completion_total = usage.value("completion_tokens", TokenCount{0});
    for (const auto& choice : choices) {
      Completion c;
      const auto& message = choice.value("message", json::object());
      if (message.contains("content") && message["content"].is_string())
        c.text = message["content"].get<std::string>();
      c.prompt_tokens = out.empty() ? prompt_tokens : 0;
      c.completion_tokens = completion_total > 0 && !choices.empty()
                                ? completion_total / choices.size()
                                : estimate_tokens(c.text);
      c.latency_ms = latency;
      out.push_back(std::move(c));
    }
    return out;
  }

  EndpointConfig cfg_;
  std::string host_;
  std::string prefix_;
};

}  // namespace orps
