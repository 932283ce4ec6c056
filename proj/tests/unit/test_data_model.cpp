#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "clipdebias/clipdebias.hpp"
#include "support/fixtures.hpp"

using namespace clipdebias;

namespace {

// Hand-assembled FEMB bytes, independent of encode_embeddings.
std::string femb_bytes(std::uint64_t rows, std::uint32_t dim, const std::vector<float>& vals,
                       std::uint16_t version = 1, std::uint8_t dtype = 1, std::uint8_t reserved = 0) {
  std::string b = "FEMB";
  b.push_back(static_cast<char>(version & 0xFF));
  b.push_back(static_cast<char>(version >> 8));
  b.push_back(static_cast<char>(dtype));
  b.push_back(static_cast<char>(reserved));
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((rows >> (8 * i)) & 0xFF));
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((dim >> (8 * i)) & 0xFF));
  for (float v : vals) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
  }
  return b;
}

EmbeddingMatrix decode(const std::string& s) {
  return decode_embeddings({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
}

}  // namespace

TEST(Femb, LoadsHandWrittenFile) {
  auto dir = fixtures::temp_dir("femb_load");
  detail::write_file_bytes(dir / "m.femb", femb_bytes(3, 2, {1, 0, 0, 1, 1, 1}), "test");
  const auto m = load_embeddings(dir / "m.femb");
  EXPECT_EQ(m.rows(), 3u);
  EXPECT_EQ(m.dim(), 2u);
  EXPECT_EQ(m(2, 0), 1.0f);
  EXPECT_EQ(m(2, 1), 1.0f);
  EXPECT_EQ(m(0, 1), 0.0f);
}

TEST(Femb, EncoderMatchesHandLayout) {
  const EmbeddingMatrix m(2, 3, {0.5f, -1.25f, 3.0f, 7.0f, 0.0f, -0.0f});
  EXPECT_EQ(encode_embeddings(m), femb_bytes(2, 3, {0.5f, -1.25f, 3.0f, 7.0f, 0.0f, -0.0f}));
}

TEST(Femb, TruncatedPayloadIsFormatError) {
  EXPECT_THROW(decode(femb_bytes(5, 2, {1, 2, 3, 4, 5, 6, 7, 8})), FormatError);
}

TEST(Femb, TrailingBytesAreFormatError) {
  auto b = femb_bytes(1, 2, {1, 2});
  b.push_back('\0');
  EXPECT_THROW(decode(b), FormatError);
}

TEST(Femb, HeaderFieldsAreChecked) {
  auto bad_magic = femb_bytes(1, 1, {1});
  bad_magic[0] = 'X';
  EXPECT_THROW(decode(bad_magic), FormatError);
  EXPECT_THROW(decode(femb_bytes(1, 1, {1}, 2)), FormatError);
  EXPECT_THROW(decode(femb_bytes(1, 1, {1}, 1, 2)), FormatError);
  EXPECT_THROW(decode(femb_bytes(1, 1, {1}, 1, 1, 9)), FormatError);
  EXPECT_THROW(decode(femb_bytes(0, 1, {})), FormatError);
  EXPECT_THROW(decode("FEMB"), FormatError);
}

TEST(Femb, NanIsDataError) {
  EXPECT_THROW(decode(femb_bytes(1, 2, {std::numeric_limits<float>::quiet_NaN(), 1})), DataError);
  EXPECT_THROW(decode(femb_bytes(1, 1, {std::numeric_limits<float>::infinity()})), DataError);
}

TEST(Femb, RoundTripIsByteIdentical) {
  std::mt19937 gen(3);
  std::normal_distribution<float> nd;
  auto dir = fixtures::temp_dir("femb_roundtrip");
  for (int trial = 0; trial < 20; ++trial) {
    const std::uint64_t rows = 1 + gen() % 7;
    const std::uint32_t dim = 1 + gen() % 9;
    std::vector<float> vals(rows * dim);
    for (auto& v : vals) v = nd(gen);
    const auto original = femb_bytes(rows, dim, vals);
    detail::write_file_bytes(dir / "a.femb", original, "test");
    write_embeddings(dir / "b.femb", load_embeddings(dir / "a.femb"));
    EXPECT_EQ(detail::read_file_bytes(dir / "b.femb", "test"), original);
  }
}

TEST(Femb, MissingFileIsFormatError) {
  EXPECT_THROW(load_embeddings("/nonexistent/x.femb"), FormatError);
}

TEST(Manifest, ParsesValidFile) {
  std::istringstream in("id\tsplit\ttarget\tattribute\na\ttrain\t0\t0\nb\ttrain\t1\t1\nc\tval\t0\t1\nd\ttest\t1\t0\n");
  const auto m = parse_manifest(in);
  EXPECT_EQ(m.size(), 4u);
  EXPECT_EQ(m.num_targets(), 2u);
  EXPECT_EQ(m.num_attributes(), 2u);
  EXPECT_EQ(m[2].split, Split::val);
  EXPECT_EQ(*m[3].attribute, 0);
}

TEST(Manifest, DuplicateIdIsDataError) {
  std::istringstream in("id\tsplit\ttarget\ns7\ttrain\t0\ns7\ttrain\t1\n");
  EXPECT_THROW(parse_manifest(in), DataError);
}

TEST(Manifest, NonContiguousTargetsIsDataError) {
  std::istringstream in("id\tsplit\ttarget\na\ttrain\t0\nb\ttrain\t2\n");
  EXPECT_THROW(parse_manifest(in), DataError);
}

TEST(Manifest, UnknownSplitIsFormatError) {
  std::istringstream in("id\tsplit\ttarget\na\tholdout\t0\n");
  EXPECT_THROW(parse_manifest(in), FormatError);
}

TEST(Manifest, PartialAttributesWithinSplitIsDataError) {
  std::istringstream in("id\tsplit\ttarget\tattribute\na\ttest\t0\t1\nb\ttest\t1\t\n");
  EXPECT_THROW(parse_manifest(in), DataError);
}

TEST(Manifest, AttributesMayBeAbsentInWholeSplit) {
  std::istringstream in("id\tsplit\ttarget\tattribute\na\ttrain\t0\t\nb\ttrain\t1\t\nc\ttest\t0\t1\nd\ttest\t1\t0\n");
  const auto m = parse_manifest(in);
  EXPECT_FALSE(m.has_attributes(Split::train));
  EXPECT_TRUE(m.has_attributes(Split::test));
}

TEST(Manifest, MalformedLinesAreFormatErrors) {
  std::istringstream no_header("a\ttrain\t0\n");
  EXPECT_THROW(parse_manifest(no_header), FormatError);
  std::istringstream bad_target("id\tsplit\ttarget\na\ttrain\tx\n");
  EXPECT_THROW(parse_manifest(bad_target), FormatError);
  std::istringstream short_line("id\tsplit\ttarget\na\ttrain\n");
  EXPECT_THROW(parse_manifest(short_line), FormatError);
}

TEST(Manifest, FormatParseRoundTrip) {
  const auto m = fixtures::make_manifest({{Split::train, 0, 1}, {Split::val, 1, 0}, {Split::test, 1, 1}});
  std::istringstream in(format_manifest(m));
  EXPECT_EQ(parse_manifest(in), m);
}

TEST(Dataset, BindsMatchingLengths) {
  std::vector<fixtures::Row> rows;
  for (int i = 0; i < 100; ++i) rows.push_back({Split::train, i % 2, std::nullopt});
  const auto man = fixtures::make_manifest(rows);
  EXPECT_EQ(bind_dataset(EmbeddingMatrix(100, 2, std::vector<float>(200, 1.0f)), man).size(), 100u);
  rows.pop_back();
  EXPECT_THROW(bind_dataset(EmbeddingMatrix(100, 2, std::vector<float>(200, 1.0f)),
                            fixtures::make_manifest(rows)),
               DataError);
  EXPECT_THROW(bind_dataset(EmbeddingMatrix(1, 2, {1.0f, 1.0f}), Manifest{}), DataError);
}

TEST(Dataset, SplitsPartitionAllSamples) {
  SynthConfig cfg;
  cfg.n = 1000;
  const auto data = gen_synthetic(cfg);
  const auto& ds = data.dataset;
  std::vector<int> seen(ds.size(), 0);
  for (Split s : {Split::train, Split::val, Split::test}) {
    for (auto i : ds.indices(s)) {
      EXPECT_EQ(ds.manifest()[i].split, s);
      ++seen[i];
    }
  }
  for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(EmbeddingMatrix, ShapeInvariants) {
  EXPECT_THROW(EmbeddingMatrix(0, 2, {}), DataError);
  EXPECT_THROW(EmbeddingMatrix(2, 2, {1, 2, 3}), DataError);
}
