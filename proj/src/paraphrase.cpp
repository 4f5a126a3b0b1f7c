#include "unlab/paraphrase.hpp"

#include <iostream>
#include <stdexcept>

#include <httplib.h>
#include <json.hpp>

#include "unlab/corpus.hpp"

namespace unlab {

RotationParaphraser::RotationParaphraser(const World& world) {
  for (const auto& rel : world.relations) {
    size_t n = rel.question_forms.size();
    for (const auto& p : world.persons) {
      for (size_t q = 0; q < n; ++q) {
        next_form_[question_text(rel, p.full_name(), int(q))] =
            question_text(rel, p.full_name(), int((q + 1) % n));
      }
    }
  }
}

std::string RotationParaphraser::rewrite(const std::string& stem) {
  auto it = next_form_.find(stem);
  return it == next_form_.end() ? stem : it->second;
}

HttpParaphraser::HttpParaphraser(std::string url, int timeout_ms, const Vocab& vocab,
                                 std::unique_ptr<ParaphraseProvider> fallback)
    : url_(std::move(url)), timeout_ms_(timeout_ms), vocab_(vocab),
      fallback_(std::move(fallback)) {}

std::string HttpParaphraser::rewrite(const std::string& stem) {
  auto fall_back = [&](const std::string& why) {
    std::cerr << "warning: paraphrase endpoint failed (" << why
              << "); using deterministic provider\n";
    return fallback_->rewrite(stem);
  };
  try {
    // Split scheme://host:port/path
    std::string rest = url_;
    auto scheme = rest.find("://");
    if (scheme != std::string::npos) rest = rest.substr(scheme + 3);
    std::string host = rest, path = "/";
    auto slash = rest.find('/');
    if (slash != std::string::npos) {
      host = rest.substr(0, slash);
      path = rest.substr(slash);
    }
    int port = 80;
    auto colon = host.find(':');
    if (colon != std::string::npos) {
      port = std::stoi(host.substr(colon + 1));
      host = host.substr(0, colon);
    }
    httplib::Client client(host, port);
    client.set_connection_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    client.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    nlohmann::json body = {{"text", stem}};
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) return fall_back("no response");
    if (res->status != 200) return fall_back("status " + std::to_string(res->status));
    auto parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("text") || !parsed["text"].is_string())
      return fall_back("bad payload");
    std::string rewritten = parsed["text"].get<std::string>();
    for (const auto& w : Vocab::split_words(rewritten)) {
      if (!vocab_.contains(w)) return fall_back("out-of-vocab word '" + w + "'");
    }
    return rewritten;
  } catch (const std::exception& e) {
    return fall_back(e.what());
  }
}

std::unique_ptr<ParaphraseProvider> make_paraphraser(const World& world, const Vocab& vocab,
                                                     const std::string& endpoint,
                                                     int timeout_ms) {
  auto rotation = std::make_unique<RotationParaphraser>(world);
  if (endpoint.empty()) return rotation;
  return std::make_unique<HttpParaphraser>(endpoint, timeout_ms, vocab, std::move(rotation));
}

}  // namespace unlab
