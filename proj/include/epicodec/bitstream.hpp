#pragma once

#include <cstdint>
#include <vector>

#include "epicodec/quantizer.hpp"
#include "epicodec/tensor.hpp"

namespace epicodec {

// Byte-oriented carryless range coder (Subbotin style). Pure 32/64-bit integer
// arithmetic, so identical input bytes come out on every platform.
class RangeEncoder {
 public:
  void encode(uint32_t cum_freq, uint32_t freq, uint32_t tot_freq);
  std::vector<uint8_t> finish();

 private:
  uint32_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  RangeDecoder(const uint8_t* data, size_t size);
  uint32_t decode_target(uint32_t tot_freq);      // cumulative-frequency slot
  void decode_update(uint32_t cum_freq, uint32_t freq, uint32_t tot_freq);

 private:
  const uint8_t* p_;
  size_t n_, pos_ = 0;
  uint32_t low_ = 0, range_ = 0xFFFFFFFFu, code_ = 0;
  uint8_t next_byte();
};

// Static symbol-frequency model. Raw counts are normalized onto a 1<<16 grid
// (every observed symbol keeps at least frequency 1); both coder ends derive
// the same table from the same counts.
struct FrequencyTable {
  std::vector<uint32_t> symbols;  // ascending
  std::vector<uint32_t> counts;   // observed counts, parallel to symbols
  std::vector<uint32_t> freq;     // normalized, parallel
  std::vector<uint32_t> cum;      // exclusive prefix sums of freq
  uint32_t total = 0;

  static FrequencyTable from_indices(const std::vector<int32_t>& idx);
  static FrequencyTable from_counts(std::vector<uint32_t> symbols, std::vector<uint32_t> counts);
  int find_by_target(uint32_t target) const;  // index into symbols
};

// Serialized side-information unit for one EPI window strip:
//   magic "EPIC", u8 version, u32 T, f32 lo, f32 hi, f32 sigma, u16 W,
//   u8 rank + u32 dims, u32 distinct-symbol count, (u32 symbol, u32 count)
//   pairs, u64 payload byte length, payload. Little-endian throughout.
struct Bitstream {
  static constexpr uint8_t kVersion = 1;
  QuantizerSpec spec;
  Shape shape;
  std::vector<uint8_t> bytes;  // complete serialized unit
};

Bitstream encode_bitstream(const Tensor<int32_t>& indices, const QuantizerSpec& spec);

struct DecodedBitstream {
  QuantizerSpec spec;
  Tensor<int32_t> indices;
};
DecodedBitstream decode_bitstream(const std::vector<uint8_t>& bytes);

}  // namespace epicodec
