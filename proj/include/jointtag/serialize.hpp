#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointtag/corpus.hpp"
#include "jointtag/network.hpp"

namespace jointtag {

enum class ModelIoErrorKind {
  kIo,
  kBadMagic,
  kBadVersion,
  kBadHeader,
  kTruncated,
  kBadChecksum,
  kDimensionMismatch,
};

struct ModelIoError : std::runtime_error {
  ModelIoErrorKind kind;
  ModelIoError(ModelIoErrorKind k, const std::string& msg)
      : std::runtime_error(msg), kind(k) {}
};

inline constexpr char kModelMagic[4] = {'K', 'J', 'T', '1'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320) over the payload.
inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len,
                           std::uint32_t seed = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = ~seed;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return ~crc;
}

namespace detail {

// All multi-byte fields are little-endian regardless of host byte order.
struct ByteWriter {
  std::vector<std::uint8_t> bytes;

  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
};

struct ByteReader {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos = 0;

  void need(std::uint64_t n) const {
    if (n > size - pos)  // pos <= size always; overflow-safe
      throw ModelIoError(ModelIoErrorKind::kTruncated, "model file is truncated");
  }
  std::uint8_t u8() {
    need(1);
    return data[pos++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data[pos++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
};

}  // namespace detail

// Serialized layout:
//   magic "KJT1", version u32,
//   input_dim u32, hidden_dim u32, num_classes u32, stacks u32,
//   tag table: count u32, then per tag u8 length + ASCII bytes,
//   vocabulary: count u32, then code points u32 (ascending),
//   payload byte count u64,
//   payload: every tensor as f32 little-endian in the declared order,
//   crc32(payload) u32.
inline std::vector<std::uint8_t> serialize_model(const ModelParams<float>& params,
                                                 const CharVocab& vocab) {
  require_shape(vocab.one_hot_dim() == params.dims.input_dim,
                "serialize_model: vocabulary does not match input dimension");
  detail::ByteWriter w;
  w.bytes.insert(w.bytes.end(), kModelMagic, kModelMagic + 4);
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(params.dims.input_dim));
  w.u32(static_cast<std::uint32_t>(params.dims.hidden_dim));
  w.u32(static_cast<std::uint32_t>(params.dims.num_classes));
  w.u32(static_cast<std::uint32_t>(params.dims.stacks));
  w.u32(static_cast<std::uint32_t>(kNumPosTags));
  for (auto name : kPosTagNames) {
    w.u8(static_cast<std::uint8_t>(name.size()));
    for (char c : name) w.u8(static_cast<std::uint8_t>(c));
  }
  w.u32(static_cast<std::uint32_t>(vocab.size()));
  for (char32_t cp : vocab.chars()) w.u32(static_cast<std::uint32_t>(cp));

  detail::ByteWriter payload;
  for (auto span : params.flat_tensors())
    for (float v : span) payload.f32(v);
  w.u64(payload.bytes.size());
  const std::size_t payload_at = w.bytes.size();
  w.bytes.insert(w.bytes.end(), payload.bytes.begin(), payload.bytes.end());
  w.u32(crc32(w.bytes.data() + payload_at, payload.bytes.size()));
  return w.bytes;
}

inline std::pair<ModelParams<float>, CharVocab> deserialize_model(
    const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r{bytes.data(), bytes.size()};
  r.need(4);
  if (!std::equal(kModelMagic, kModelMagic + 4, bytes.begin()))
    throw ModelIoError(ModelIoErrorKind::kBadMagic, "not a model file (bad magic)");
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion)
    throw ModelIoError(ModelIoErrorKind::kBadVersion,
                       "unsupported model format version " + std::to_string(version));
  ModelDims dims;
  dims.input_dim = r.u32();
  dims.hidden_dim = r.u32();
  dims.num_classes = r.u32();
  dims.stacks = r.u32();
  if (dims.num_classes != kNumLabelClasses)
    throw ModelIoError(ModelIoErrorKind::kBadHeader,
                       "model class count does not match this build");
  const std::uint32_t tag_count = r.u32();
  if (tag_count != kNumPosTags)
    throw ModelIoError(ModelIoErrorKind::kBadHeader, "unexpected tag table size");
  for (std::size_t i = 0; i < kNumPosTags; ++i) {
    const std::uint8_t len = r.u8();
    std::string name(len, '\0');
    for (auto& c : name) c = static_cast<char>(r.u8());
    if (name != kPosTagNames[i])
      throw ModelIoError(ModelIoErrorKind::kBadHeader,
                         "tag table mismatch at index " + std::to_string(i));
  }
  const std::uint32_t vocab_size = r.u32();
  std::vector<char32_t> chars(vocab_size);
  for (auto& cp : chars) cp = static_cast<char32_t>(r.u32());
  for (std::size_t i = 1; i < chars.size(); ++i)
    if (chars[i] <= chars[i - 1])
      throw ModelIoError(ModelIoErrorKind::kBadHeader,
                         "vocabulary code points are not strictly ascending");
  CharVocab vocab(std::move(chars));
  if (vocab.one_hot_dim() != dims.input_dim)
    throw ModelIoError(ModelIoErrorKind::kDimensionMismatch,
                       "input dimension does not match vocabulary size");
  if (dims.hidden_dim == 0 || dims.stacks == 0)
    throw ModelIoError(ModelIoErrorKind::kBadHeader, "zero hidden dimension or stacks");

  ModelParams<float> params(dims);
  std::size_t expected = 0;
  for (auto span : params.flat_tensors()) expected += span.size() * sizeof(float);
  const std::uint64_t payload_len = r.u64();
  if (payload_len != expected)
    throw ModelIoError(
        ModelIoErrorKind::kDimensionMismatch,
        "payload holds " + std::to_string(payload_len / sizeof(float)) +
            " values but the header dimensions require " +
            std::to_string(expected / sizeof(float)));
  r.need(payload_len + 4);
  const std::uint32_t stored_crc =
      detail::ByteReader{bytes.data(), bytes.size(),
                         r.pos + static_cast<std::size_t>(payload_len)}
          .u32();
  const std::uint32_t actual_crc = crc32(bytes.data() + r.pos, payload_len);
  if (stored_crc != actual_crc)
    throw ModelIoError(ModelIoErrorKind::kBadChecksum,
                       "payload checksum mismatch (corrupt model file)");
  for (auto span : params.flat_tensors())
    for (float& v : span) v = r.f32();
  return {std::move(params), std::move(vocab)};
}

inline void save_model(const std::string& path, const ModelParams<float>& params,
                       const CharVocab& vocab) {
  const auto bytes = serialize_model(params, vocab);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw ModelIoError(ModelIoErrorKind::kIo, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelIoError(ModelIoErrorKind::kIo, "failed writing " + path);
}

inline std::pair<ModelParams<float>, CharVocab> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelIoError(ModelIoErrorKind::kIo, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw ModelIoError(ModelIoErrorKind::kIo, "failed reading " + path);
  return deserialize_model(bytes);
}

}  // namespace jointtag
