#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bilat/lang.hpp"

using namespace bilat;
namespace fs = std::filesystem;

namespace {

double cosine(const LanguageEmbedding& a, const LanguageEmbedding& b) {
  double dot = 0.0;
  for (int i = 0; i < a.dim(); ++i) dot += a.values[i] * b.values[i];
  return dot / (a.l2_norm() * b.l2_norm());
}

fs::path write_table(const std::string& content, const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  std::ofstream(p) << content;
  return p;
}

}  // namespace

TEST_CASE("normalize_instruction folds case and applies the prompt once") {
  PromptTemplate none;
  CHECK(normalize_instruction("Softly grasp the cup", none) == "softly grasp the cup");
  CHECK(normalize_instruction("  padded   ", none) == "padded");

  PromptTemplate photo;
  photo.prefix = "a photo of a ";
  CHECK(normalize_instruction("cup", photo) == "a photo of a cup");

  // idempotence on its own output
  const std::string once = normalize_instruction("Strongly twist the sponge", photo);
  CHECK(normalize_instruction(once, photo) == once);

  CHECK_THROWS_AS(normalize_instruction("   ", none), std::invalid_argument);
}

TEST_CASE("hashed encoder is deterministic and unit norm") {
  auto a = encode_hashed("softly grasp the cup", 64, 0);
  auto b = encode_hashed("softly grasp the cup", 64, 0);
  CHECK(a.values == b.values);
  CHECK(a.l2_norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(a.dim() == 64);
  CHECK(a.encoder_id == "hashed64");

  auto c = encode_hashed("strongly grasp the cup", 64, 0);
  CHECK(cosine(a, c) < 1.0 - 1e-6);  // the two instructions must separate
  // single-bucket hashing can collide for an unlucky seed; 7 is one such
  auto d = encode_hashed("softly grasp the cup", 64, 7);
  auto e = encode_hashed("strongly grasp the cup", 64, 7);
  CHECK(d.values == e.values);

  CHECK_THROWS_AS(encode_hashed("anything", 4, 0), std::invalid_argument);
}

TEST_CASE("precomputed table loads and looks up exact matches") {
  const std::string table =
      "siglip\t4\tsoftly grasp the cup\t0.5,0.5,0.5,0.5\n"
      "siglip\t4\tstrongly grasp the cup\t0.5,-0.5,0.5,-0.5\n";
  auto t = PrecomputedTable::load(write_table(table, "emb_ok.tsv"));
  CHECK(t.size() == 2);
  const auto& e = t.lookup("siglip", "softly grasp the cup");
  CHECK(e.values == std::vector<double>{0.5, 0.5, 0.5, 0.5});
  CHECK_THROWS_AS(t.lookup("siglip", "unlisted instruction"), std::invalid_argument);
}

TEST_CASE("precomputed table rejects inconsistent dims per encoder") {
  const std::string table =
      "clip\t4\ta\t1,0,0,0\n"
      "clip\t2\tb\t1,0\n";
  CHECK_THROWS_WITH_AS(PrecomputedTable::load(write_table(table, "emb_dim.tsv")),
                       doctest::Contains("line 2"), FormatError);
}

TEST_CASE("precomputed table reports malformed lines by number") {
  CHECK_THROWS_WITH_AS(
      PrecomputedTable::load(write_table("clip\t2\tmissing-values\n", "emb_bad.tsv")),
      doctest::Contains("line 1"), FormatError);
  CHECK_THROWS_WITH_AS(
      PrecomputedTable::load(write_table("clip\t2\tx\t1,zzz\n", "emb_badf.tsv")),
      doctest::Contains("line 1"), FormatError);
}

TEST_CASE("encoder dispatch carries encoder ids and normalization") {
  PromptTemplate tmpl;
  EncoderConfig hashed;
  hashed.kind = "hashed";
  hashed.dim = 64;
  LanguageEncoder enc(hashed, tmpl);
  auto e = enc.encode("  Softly GRASP the cup ");
  CHECK(e.encoder_id == "hashed64");
  CHECK(e.dim() == 64);
  CHECK(e.l2_norm() == doctest::Approx(1.0).epsilon(1e-6));
  // same text after normalization -> identical embedding
  auto e2 = enc.encode("softly grasp the cup");
  CHECK(e.values == e2.values);

  EncoderConfig pre;
  pre.kind = "precomputed";
  pre.encoder_id = "siglip";
  pre.dim = 4;
  pre.table_path =
      write_table("siglip\t4\tsoftly grasp the cup\t0,1,0,0\n", "emb_disp.tsv").string();
  LanguageEncoder penc(pre, tmpl);
  auto pe = penc.encode("Softly grasp the cup");
  CHECK(pe.encoder_id == "siglip");
  CHECK(pe.values == std::vector<double>{0, 1, 0, 0});  // stored vector verbatim
  CHECK_THROWS_AS(penc.encode("softly twist the sponge"), std::invalid_argument);

  // two encoders on the same text -> distinct provenance
  CHECK(e.encoder_id != pe.encoder_id);

  EncoderConfig none;
  none.kind = "none";
  none.dim = 8;
  LanguageEncoder nenc(none, tmpl);
  auto ne = nenc.encode("whatever text");
  CHECK(ne.encoder_id == "none");
  CHECK(ne.l2_norm() == 0.0);
}
