#include "bilat/lang.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace bilat {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

bool starts_with(const std::string& s, const std::string& p) {
  return s.size() >= p.size() && s.compare(0, p.size(), p) == 0;
}

bool ends_with(const std::string& s, const std::string& p) {
  return s.size() >= p.size() && s.compare(s.size() - p.size(), p.size(), p) == 0;
}

}  // namespace

std::string normalize_instruction(const std::string& text,
                                  const PromptTemplate& tmpl) {
  std::string s = trim(text);
  if (s.empty()) throw std::invalid_argument("normalize_instruction: empty text");
  if (tmpl.lowercase) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  }
  if (!tmpl.prefix.empty() && !starts_with(s, tmpl.prefix)) s = tmpl.prefix + s;
  if (!tmpl.suffix.empty() && !ends_with(s, tmpl.suffix)) s += tmpl.suffix;
  return s;
}

double LanguageEmbedding::l2_norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

LanguageEmbedding encode_hashed(const std::string& text, int dim, uint64_t seed) {
  if (dim < 8) throw std::invalid_argument("encode_hashed: dim must be >= 8");
  LanguageEmbedding emb;
  emb.encoder_id = "hashed" + std::to_string(dim);
  emb.values.assign(dim, 0.0);
  std::istringstream iss(text);
  std::string token;
  while (iss >> token) {
    const uint64_t h = hash_string(token, seed);
    const size_t idx = h % static_cast<uint64_t>(dim);
    emb.values[idx] += (h >> 63) ? -1.0 : 1.0;
  }
  const double norm = emb.l2_norm();
  if (norm == 0.0) {
    throw std::invalid_argument("encode_hashed: degenerate (all-zero) embedding for \"" +
                                text + "\"");
  }
  for (double& v : emb.values) v /= norm;
  return emb;
}

PrecomputedTable PrecomputedTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open embedding table: " + path.string());
  PrecomputedTable t;
  std::map<std::string, int> dims;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    size_t pos = 0;
    for (int i = 0; i < 3; ++i) {
      const size_t tab = line.find('\t', pos);
      if (tab == std::string::npos) {
        throw FormatError("embedding table line " + std::to_string(lineno) +
                          ": expected 4 tab-separated fields");
      }
      cols.push_back(line.substr(pos, tab - pos));
      pos = tab + 1;
    }
    cols.push_back(line.substr(pos));

    LanguageEmbedding emb;
    emb.encoder_id = cols[0];
    int dim = 0;
    try {
      dim = std::stoi(cols[1]);
    } catch (...) {
      throw FormatError("embedding table line " + std::to_string(lineno) +
                        ": bad dim field '" + cols[1] + "'");
    }
    std::istringstream vs(cols[3]);
    std::string num;
    while (std::getline(vs, num, ',')) {
      try {
        emb.values.push_back(std::stod(num));
      } catch (...) {
        throw FormatError("embedding table line " + std::to_string(lineno) +
                          ": bad float '" + num + "'");
      }
    }
    if (emb.dim() != dim) {
      throw FormatError("embedding table line " + std::to_string(lineno) + ": declared dim " +
                        std::to_string(dim) + " but found " + std::to_string(emb.dim()) +
                        " values");
    }
    auto [it, fresh] = dims.emplace(emb.encoder_id, dim);
    if (!fresh && it->second != dim) {
      throw FormatError("embedding table line " + std::to_string(lineno) +
                        ": dim mismatch for encoder '" + emb.encoder_id + "' (" +
                        std::to_string(dim) + " vs " + std::to_string(it->second) + ")");
    }
    t.table_[{emb.encoder_id, cols[2]}] = std::move(emb);
  }
  return t;
}

const LanguageEmbedding& PrecomputedTable::lookup(
    const std::string& encoder_id, const std::string& normalized_text) const {
  const auto it = table_.find({encoder_id, normalized_text});
  if (it == table_.end()) {
    throw std::invalid_argument("no precomputed embedding for encoder '" + encoder_id +
                                "', text \"" + normalized_text + "\"");
  }
  return it->second;
}

bool PrecomputedTable::contains(const std::string& encoder_id,
                                const std::string& text) const {
  return table_.count({encoder_id, text}) > 0;
}

void EncoderConfig::validate() const {
  if (kind != "hashed" && kind != "precomputed" && kind != "none") {
    throw ConfigError("encoder kind must be hashed|precomputed|none, got '" + kind + "'");
  }
  if (kind == "hashed" && dim < 8) throw ConfigError("hashed encoder dim must be >= 8");
  if (kind == "precomputed" && table_path.empty()) {
    throw ConfigError("precomputed encoder requires table_path");
  }
}

LanguageEncoder::LanguageEncoder(const EncoderConfig& cfg, const PromptTemplate& tmpl)
    : cfg_(cfg), tmpl_(tmpl) {
  cfg_.validate();
  if (cfg_.kind == "hashed") {
    id_ = "hashed" + std::to_string(cfg_.dim);
  } else if (cfg_.kind == "none") {
    id_ = "none";
  } else {
    table_ = PrecomputedTable::load(cfg_.table_path);
    id_ = cfg_.encoder_id;
    if (id_.empty()) throw ConfigError("precomputed encoder requires encoder_id");
  }
}

std::string LanguageEncoder::normalize(const std::string& raw_text) const {
  return normalize_instruction(raw_text, tmpl_);
}

LanguageEmbedding LanguageEncoder::encode(const std::string& raw_text) const {
  const std::string text = normalize(raw_text);
  if (cfg_.kind == "hashed") return encode_hashed(text, cfg_.dim, cfg_.seed);
  if (cfg_.kind == "none") {
    LanguageEmbedding emb;
    emb.encoder_id = "none";
    emb.values.assign(cfg_.dim, 0.0);
    return emb;
  }
  LanguageEmbedding emb = table_.lookup(id_, text);
  return emb;
}

}  // namespace bilat
