#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "epicodec/bitstream.hpp"
#include "epicodec/common.hpp"

using namespace epicodec;

namespace {

Tensor<int32_t> random_indices(Rng& rng, Shape s, int levels) {
  Tensor<int32_t> t(s);
  for (auto& v : t.v) v = int32_t(rng.uniform_int(uint64_t(levels)));
  return t;
}

double empirical_entropy_bits(const Tensor<int32_t>& idx) {
  std::map<int32_t, int64_t> hist;
  for (auto v : idx.v) ++hist[v];
  double h = 0, n = double(idx.numel());
  for (const auto& [sym, c] : hist) {
    double p = double(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

}  // namespace

TEST_CASE("decode(encode(q)) is bit-exact for random quantized codes") {
  Rng rng(101);
  auto spec = QuantizerSpec::make(90000, -1.0, 1.0, 50.0, 9);
  for (int it = 0; it < 100; ++it) {
    Shape s{1, 1 + int(rng.uniform_int(4)), 1 + int(rng.uniform_int(40)),
            1 + int(rng.uniform_int(8))};
    int levels = 2 + int(rng.uniform_int(1000));
    auto idx = random_indices(rng, s, levels);
    auto bs = encode_bitstream(idx, spec);
    auto dec = decode_bitstream(bs.bytes);
    REQUIRE(dec.indices.shape == s);
    CHECK(dec.indices.v == idx.v);
    CHECK(dec.spec.levels == spec.levels);
  }
}

TEST_CASE("near-zero-entropy source: 10^4 identical indices fit in under 64 bytes") {
  auto spec = QuantizerSpec::make(90000, -1.0, 1.0, 50.0, 9);
  Tensor<int32_t> idx({1, 1, 10000, 1});
  idx.fill(4217);
  auto bs = encode_bitstream(idx, spec);
  size_t header = 4 + 1 + 4 + 4 + 4 + 4 + 2 + 1 + 16 + 4 + 8 * 1 + 8;
  size_t payload = bs.bytes.size() - header;
  CHECK(payload < 64);
  CHECK(payload <= header);  // header dominates
  auto dec = decode_bitstream(bs.bytes);
  CHECK(dec.indices.v == idx.v);
}

TEST_CASE("payload stays within 1.02x the empirical-entropy bound for uniform indices") {
  Rng rng(103);
  auto spec = QuantizerSpec::make(90000, -1.0, 1.0, 50.0, 9);
  Tensor<int32_t> idx({1, 1, 65536, 1});
  for (auto& v : idx.v) v = int32_t(rng.uniform_int(256));
  auto bs = encode_bitstream(idx, spec);

  double h_bits = empirical_entropy_bits(idx);
  double bound_payload = 1.02 * h_bits * double(idx.numel()) / 8.0;
  // header = total - payload; payload length sits in the trailing u64 field
  std::map<int32_t, int> distinct;
  for (auto v : idx.v) distinct[v] = 1;
  size_t header = 4 + 1 + 4 + 4 + 4 + 4 + 2 + 1 + 16 + 4 + 8 * distinct.size() + 8;
  size_t payload = bs.bytes.size() - header;
  CHECK(double(payload) <= bound_payload);
  CHECK(double(bs.bytes.size()) <= bound_payload + double(header));
}

TEST_CASE("skewed sources compress below the uniform rate") {
  Rng rng(107);
  auto spec = QuantizerSpec::make(256, -1.0, 1.0, 50.0, 9);
  Tensor<int32_t> idx({1, 1, 20000, 1});
  for (auto& v : idx.v) {
    double u = rng.uniform();
    v = u < 0.9 ? int32_t(rng.uniform_int(4)) : int32_t(rng.uniform_int(256));
  }
  auto bs = encode_bitstream(idx, spec);
  auto dec = decode_bitstream(bs.bytes);
  CHECK(dec.indices.v == idx.v);
  double h_bits = empirical_entropy_bits(idx);
  CHECK(double(bs.bytes.size()) < 1.05 * h_bits * 20000 / 8.0 + 3000);
}

TEST_CASE("distinct diagnostics: magic, version, truncation, table mismatch") {
  Rng rng(109);
  auto spec = QuantizerSpec::make(512, -1.0, 1.0, 50.0, 9);
  auto idx = random_indices(rng, {1, 2, 30, 3}, 512);
  auto good = encode_bitstream(idx, spec).bytes;

  auto expect_kind = [](const std::vector<uint8_t>& bytes, BitstreamError::Kind kind) {
    try {
      decode_bitstream(bytes);
      FAIL("expected BitstreamError");
    } catch (const BitstreamError& e) {
      CHECK(e.kind == kind);
    }
  };

  auto bad_magic = good;
  bad_magic[0] ^= 0xFF;
  expect_kind(bad_magic, BitstreamError::Kind::BadMagic);

  auto bad_version = good;
  bad_version[4] = 99;
  expect_kind(bad_version, BitstreamError::Kind::BadVersion);

  auto truncated = good;
  truncated.resize(truncated.size() - 5);
  expect_kind(truncated, BitstreamError::Kind::Truncated);

  auto bad_table = good;
  // first (symbol,count) pair starts after the fixed 40-byte prefix; corrupt a count
  size_t count_off = 4 + 1 + 4 + 4 + 4 + 4 + 2 + 1 + 16 + 4 + 4;
  bad_table[count_off] ^= 0x01;
  expect_kind(bad_table, BitstreamError::Kind::TableMismatch);
}

TEST_CASE("encoder output is deterministic and matches the frozen byte image") {
  auto spec = QuantizerSpec::make(1024, -1.0, 1.0, 50.0, 9);
  Tensor<int32_t> idx({1, 2, 8, 2});
  for (size_t i = 0; i < idx.v.size(); ++i) idx.v[i] = int32_t((i * 37 + 11) % 1024);
  auto a = encode_bitstream(idx, spec);
  auto b = encode_bitstream(idx, spec);
  CHECK(a.bytes == b.bytes);
  // integer-only coder: byte image is platform independent
  CHECK(hex64(fnv1a64(a.bytes.data(), a.bytes.size())) == "745dbab5f29f4bd7");
}
