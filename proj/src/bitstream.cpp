#include "epicodec/bitstream.hpp"

#include <algorithm>
#include <map>

#include "epicodec/common.hpp"

namespace epicodec {

namespace {
constexpr uint32_t kTop = 1u << 24;
constexpr uint32_t kBot = 1u << 16;
constexpr char kMagic[4] = {'E', 'P', 'I', 'C'};
}  // namespace

void RangeEncoder::encode(uint32_t cum_freq, uint32_t freq, uint32_t tot_freq) {
  uint32_t r = range_ / tot_freq;
  low_ += r * cum_freq;
  range_ = r * freq;
  while ((low_ ^ (low_ + range_)) < kTop ||
         (range_ < kBot && ((range_ = (0u - low_) & (kBot - 1)), true))) {
    out_.push_back(uint8_t(low_ >> 24));
    low_ <<= 8;
    range_ <<= 8;
  }
}

std::vector<uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 4; ++i) {
    out_.push_back(uint8_t(low_ >> 24));
    low_ <<= 8;
  }
  return std::move(out_);
}

RangeDecoder::RangeDecoder(const uint8_t* data, size_t size) : p_(data), n_(size) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() {
  if (pos_ < n_) return p_[pos_++];
  ++pos_;  // reading past the tail pad is tolerated; payload length is checked upstream
  return 0;
}

uint32_t RangeDecoder::decode_target(uint32_t tot_freq) {
  uint32_t r = range_ / tot_freq;
  uint32_t target = (code_ - low_) / r;
  return target >= tot_freq ? tot_freq - 1 : target;
}

void RangeDecoder::decode_update(uint32_t cum_freq, uint32_t freq, uint32_t tot_freq) {
  uint32_t r = range_ / tot_freq;
  low_ += r * cum_freq;
  range_ = r * freq;
  while ((low_ ^ (low_ + range_)) < kTop ||
         (range_ < kBot && ((range_ = (0u - low_) & (kBot - 1)), true))) {
    code_ = (code_ << 8) | next_byte();
    low_ <<= 8;
    range_ <<= 8;
  }
}

FrequencyTable FrequencyTable::from_indices(const std::vector<int32_t>& idx) {
  std::map<uint32_t, uint32_t> hist;
  for (int32_t v : idx) {
    if (v < 0) throw std::invalid_argument("bitstream: negative index");
    ++hist[uint32_t(v)];
  }
  std::vector<uint32_t> symbols, counts;
  for (const auto& [s, c] : hist) {
    symbols.push_back(s);
    counts.push_back(c);
  }
  return from_counts(std::move(symbols), std::move(counts));
}

FrequencyTable FrequencyTable::from_counts(std::vector<uint32_t> symbols,
                                           std::vector<uint32_t> counts) {
  if (symbols.empty() || symbols.size() != counts.size())
    throw BitstreamError(BitstreamError::Kind::TableMismatch, "empty or malformed frequency table");
  FrequencyTable t;
  t.symbols = std::move(symbols);
  t.counts = std::move(counts);
  uint64_t raw_total = 0;
  for (uint32_t c : t.counts) {
    if (c == 0)
      throw BitstreamError(BitstreamError::Kind::TableMismatch, "zero count in frequency table");
    raw_total += c;
  }
  // deterministic largest-remainder normalization to a total of exactly 2^16
  const uint64_t target = kBot;
  size_t n = t.counts.size();
  if (n > target)
    throw BitstreamError(BitstreamError::Kind::TableMismatch,
                         "more distinct symbols than the coder grid supports");
  t.freq.assign(n, 0);
  if (n == 1) {
    t.freq[0] = uint32_t(target);
  } else {
    std::vector<std::pair<uint64_t, size_t>> rema(n);
    uint64_t assigned = 0;
    for (size_t i = 0; i < n; ++i) {
      uint64_t scaled = uint64_t(t.counts[i]) * target;
      uint64_t f = scaled / raw_total;
      if (f == 0) f = 1;
      t.freq[i] = uint32_t(f);
      assigned += f;
      rema[i] = {scaled % raw_total, i};
    }
    // distribute leftovers by largest remainder (ties by lower index)
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    size_t k = 0;
    while (assigned < target) {
      t.freq[rema[k % n].second] += 1;
      ++assigned;
      ++k;
    }
    while (assigned > target) {
      size_t i = rema[k % n].second;
      if (t.freq[i] > 1) {
        t.freq[i] -= 1;
        --assigned;
      }
      ++k;
    }
  }
  t.cum.assign(n, 0);
  uint32_t acc = 0;
  for (size_t i = 0; i < n; ++i) {
    t.cum[i] = acc;
    acc += t.freq[i];
  }
  t.total = acc;
  return t;
}

int FrequencyTable::find_by_target(uint32_t target) const {
  // last i with cum[i] <= target
  int lo = 0, hi = int(symbols.size()) - 1;
  while (lo < hi) {
    int mid = (lo + hi + 1) / 2;
    if (cum[size_t(mid)] <= target) lo = mid;
    else hi = mid - 1;
  }
  return lo;
}

Bitstream encode_bitstream(const Tensor<int32_t>& indices, const QuantizerSpec& spec) {
  spec.validate();
  for (int32_t v : indices.v)
    if (v < 0 || v >= spec.levels)
      throw std::invalid_argument("encode_bitstream: index outside [0,T)");
  FrequencyTable table = FrequencyTable::from_indices(indices.v);

  std::map<uint32_t, int> slot;
  for (size_t i = 0; i < table.symbols.size(); ++i) slot[table.symbols[i]] = int(i);

  RangeEncoder enc;
  for (int32_t v : indices.v) {
    int i = slot[uint32_t(v)];
    enc.encode(table.cum[size_t(i)], table.freq[size_t(i)], table.total);
  }
  std::vector<uint8_t> payload = enc.finish();

  ByteWriter w;
  w.raw(kMagic, 4);
  w.u8(Bitstream::kVersion);
  w.u32(uint32_t(spec.levels));
  w.f32(float(spec.lo));
  w.f32(float(spec.hi));
  w.f32(float(spec.sigma));
  w.u16(uint16_t(spec.window));
  w.u8(4);
  w.u32(uint32_t(indices.shape.b));
  w.u32(uint32_t(indices.shape.h));
  w.u32(uint32_t(indices.shape.w));
  w.u32(uint32_t(indices.shape.c));
  w.u32(uint32_t(table.symbols.size()));
  for (size_t i = 0; i < table.symbols.size(); ++i) {
    w.u32(table.symbols[i]);
    w.u32(table.counts[i]);
  }
  w.u64(payload.size());
  w.raw(payload.data(), payload.size());

  Bitstream bs;
  bs.spec = spec;
  bs.shape = indices.shape;
  bs.bytes = std::move(w.bytes);
  return bs;
}

DecodedBitstream decode_bitstream(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw BitstreamError(BitstreamError::Kind::BadMagic, "bad magic");
  uint8_t version = r.u8();
  if (version != Bitstream::kVersion)
    throw BitstreamError(BitstreamError::Kind::BadVersion,
                         "unsupported version " + std::to_string(version));
  DecodedBitstream out;
  out.spec.levels = int(r.u32());
  out.spec.lo = double(r.f32());
  out.spec.hi = double(r.f32());
  out.spec.sigma = double(r.f32());
  out.spec.window = int(r.u16());
  uint8_t rank = r.u8();
  if (rank != 4)
    throw BitstreamError(BitstreamError::Kind::Truncated, "unexpected tensor rank");
  Shape shape;
  shape.b = int(r.u32());
  shape.h = int(r.u32());
  shape.w = int(r.u32());
  shape.c = int(r.u32());
  if (shape.numel() <= 0)
    throw BitstreamError(BitstreamError::Kind::Truncated, "empty index tensor");

  uint32_t distinct = r.u32();
  if (distinct == 0)
    throw BitstreamError(BitstreamError::Kind::TableMismatch, "empty frequency table");
  std::vector<uint32_t> symbols(distinct), counts(distinct);
  uint64_t count_total = 0;
  for (uint32_t i = 0; i < distinct; ++i) {
    symbols[i] = r.u32();
    counts[i] = r.u32();
    count_total += counts[i];
    if (symbols[i] >= uint32_t(out.spec.levels))
      throw BitstreamError(BitstreamError::Kind::TableMismatch, "table symbol outside [0,T)");
    if (i > 0 && symbols[i] <= symbols[i - 1])
      throw BitstreamError(BitstreamError::Kind::TableMismatch, "table symbols not ascending");
  }
  if (count_total != uint64_t(shape.numel()))
    throw BitstreamError(BitstreamError::Kind::TableMismatch,
                         "frequency table total disagrees with payload element count");

  uint64_t payload_len = r.u64();
  if (r.remaining() < payload_len)
    throw BitstreamError(BitstreamError::Kind::Truncated, "payload shorter than declared");

  FrequencyTable table = FrequencyTable::from_counts(std::move(symbols), std::move(counts));
  RangeDecoder dec(bytes.data() + r.pos, size_t(payload_len));
  out.indices = Tensor<int32_t>(shape);
  std::vector<uint32_t> remaining = table.counts;
  for (auto& v : out.indices.v) {
    uint32_t target = dec.decode_target(table.total);
    int i = table.find_by_target(target);
    dec.decode_update(table.cum[size_t(i)], table.freq[size_t(i)], table.total);
    if (remaining[size_t(i)] == 0)
      throw BitstreamError(BitstreamError::Kind::TableMismatch,
                           "decoded symbols disagree with frequency table");
    --remaining[size_t(i)];
    v = int32_t(table.symbols[size_t(i)]);
  }
  return out;
}

}  // namespace epicodec
