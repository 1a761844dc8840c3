#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bilat/common.hpp"

namespace bilat {

// Prompt engineering applied before encoding. Applying the template to its
// own output changes nothing (prefix/suffix are added exactly once).
struct PromptTemplate {
  std::string prefix;
  std::string suffix;
  bool lowercase = true;
};

std::string normalize_instruction(const std::string& text,
                                  const PromptTemplate& tmpl);

struct LanguageEmbedding {
  std::string encoder_id;
  std::vector<double> values;

  int dim() const { return static_cast<int>(values.size()); }
  double l2_norm() const;
};

// Deterministic bag-of-words stand-in for the pretrained text encoders:
// whitespace tokens, seeded 64-bit hash to (index, sign), L2-normalized.
LanguageEmbedding encode_hashed(const std::string& text, int dim, uint64_t seed);

// Embeddings exported from real encoders, imported as data. Line format:
//   encoder_id TAB dim TAB text TAB v1,v2,...,vdim
class PrecomputedTable {
 public:
  static PrecomputedTable load(const std::filesystem::path& path);

  const LanguageEmbedding& lookup(const std::string& encoder_id,
                                  const std::string& normalized_text) const;
  bool contains(const std::string& encoder_id, const std::string& text) const;
  size_t size() const { return table_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, LanguageEmbedding> table_;
};

struct EncoderConfig {
  std::string kind = "hashed";  // hashed | precomputed | none
  int dim = 64;
  uint64_t seed = 0;
  std::string table_path;       // precomputed only
  std::string encoder_id;       // precomputed: which id to use from the table

  void validate() const;
};

// Normalizes with the template, then dispatches to the selected encoder.
// "none" is the unconditioned ablation: a zero vector tagged "none".
class LanguageEncoder {
 public:
  LanguageEncoder(const EncoderConfig& cfg, const PromptTemplate& tmpl);

  LanguageEmbedding encode(const std::string& raw_text) const;
  std::string normalize(const std::string& raw_text) const;
  const std::string& id() const { return id_; }
  int dim() const { return cfg_.dim; }

 private:
  EncoderConfig cfg_;
  PromptTemplate tmpl_;
  std::string id_;
  PrecomputedTable table_;
};

}  // namespace bilat
