#pragma once

// HTTP transport for the labeling endpoint. Kept out of labeling.hpp so only
// the CLI and the labeling tests compile the HTTP client. Build with
// CPPHTTPLIB_OPENSSL_SUPPORT for https endpoints.

#include <chrono>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include <httplib.h>

#include "mmattack/labeling.hpp"

namespace mmattack {

inline constexpr const char* kCompletionPath = "/v1/chat/completions";

// Posts a chat-completion request and returns the assistant message content.
// Transport failures (no connection, non-200 status) retry max_retries times
// with a small delay; a malformed response body fails immediately with the
// raw body attached.
inline std::string post_completion(const LabelerEndpoint& endpoint, const json& body) {
  if (endpoint.base_url.empty()) throw ConfigError("labeler endpoint base_url is empty");
  httplib::Client client(endpoint.base_url);
  client.set_connection_timeout(std::chrono::milliseconds(
      static_cast<int>(endpoint.timeout_seconds * 1000)));
  client.set_read_timeout(std::chrono::milliseconds(
      static_cast<int>(endpoint.timeout_seconds * 1000)));
  httplib::Headers headers;
  if (!endpoint.api_key_env.empty()) {
    if (const char* key = std::getenv(endpoint.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  std::string payload = body.dump();
  if (endpoint.verbose)
    std::cerr << "[labeler] POST " << endpoint.base_url << kCompletionPath << " " << payload
              << "\n";

  std::string last_error;
  for (int attempt = 1; attempt <= endpoint.max_retries; ++attempt) {
    auto res = client.Post(kCompletionPath, headers, payload, "application/json");
    if (!res) {
      last_error = "connection failure: " + httplib::to_string(res.error());
    } else if (res->status != 200) {
      std::ostringstream os;
      os << "status " << res->status << ": " << res->body;
      last_error = os.str();
    } else {
      if (endpoint.verbose) std::cerr << "[labeler] reply " << res->body << "\n";
      json reply;
      try {
        reply = json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const json::exception& e) {
        throw ParseError(std::string("malformed completion response: ") + e.what() +
                         "; raw body: " + res->body);
      }
    }
    if (attempt < endpoint.max_retries)
      std::this_thread::sleep_for(std::chrono::milliseconds(endpoint.retry_delay_ms));
  }
  throw IoError("labeler endpoint failed after " + std::to_string(endpoint.max_retries) +
                " attempts: " + last_error);
}

template <VictimModel V>
LabelRecord request_pseudo_label(const McInstance& instance, const LabelerEndpoint& endpoint,
                                 const V& mock_victim) {
  return request_pseudo_label(instance, endpoint, mock_victim,
                              [](const LabelerEndpoint& ep, const json& body) {
                                return post_completion(ep, body);
                              });
}

}  // namespace mmattack
