#pragma once

#include <memory>
#include <string>

#include "unlab/vocab.hpp"
#include "unlab/world.hpp"

namespace unlab {

class ParaphraseProvider {
 public:
  virtual ~ParaphraseProvider() = default;
  virtual std::string rewrite(const std::string& stem) = 0;
};

// Default provider: rotates a known question stem to the relation's next
// surface form; unknown stems pass through unchanged.
class RotationParaphraser : public ParaphraseProvider {
 public:
  RotationParaphraser(const World& world);
  std::string rewrite(const std::string& stem) override;

 private:
  std::map<std::string, std::string> next_form_;
};

// POSTs {"text": stem} to the endpoint and expects {"text": rewritten}.
// Any failure (connection, timeout, bad payload, out-of-vocab output) falls
// back to the wrapped provider with a warning on stderr.
class HttpParaphraser : public ParaphraseProvider {
 public:
  HttpParaphraser(std::string url, int timeout_ms, const Vocab& vocab,
                  std::unique_ptr<ParaphraseProvider> fallback);
  std::string rewrite(const std::string& stem) override;

 private:
  std::string url_;
  int timeout_ms_;
  const Vocab& vocab_;
  std::unique_ptr<ParaphraseProvider> fallback_;
};

// endpoint empty -> rotation provider; otherwise HTTP with rotation fallback.
std::unique_ptr<ParaphraseProvider> make_paraphraser(const World& world, const Vocab& vocab,
                                                     const std::string& endpoint,
                                                     int timeout_ms);

}  // namespace unlab
