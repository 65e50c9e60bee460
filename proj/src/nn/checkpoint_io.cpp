#include "planwrite/nn/checkpoint_io.hpp"

#include <bit>
#include <cstring>
#include <numeric>

#include "planwrite/error.hpp"

namespace planwrite::nn {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_string(std::string& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string string() {
    const auto n = static_cast<std::size_t>(uint(4));
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const CheckpointPayload& payload) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(payload.vocabulary.size()));
  for (const auto& t : payload.vocabulary) put_string(out, t);
  put_string(out, payload.metadata);
  for (const auto& [name, t] : payload.params) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u64(out, d);
    for (double v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

CheckpointPayload decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.raw(4) != std::string_view(kCheckpointMagic, 4)) throw DataError("not a checkpoint (bad magic)");
  const auto version = in.uint(4);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointPayload payload;
  const auto n_tokens = in.uint(4);
  for (std::uint64_t i = 0; i < n_tokens; ++i) payload.vocabulary.push_back(in.string());
  payload.metadata = in.string();
  while (!in.done()) {
    const std::string name = in.string();
    const auto rank = in.uint(4);
    if (rank > 8) throw DataError("checkpoint record " + name + ": implausible rank");
    std::vector<std::size_t> dims;
    for (std::uint64_t r = 0; r < rank; ++r) dims.push_back(static_cast<std::size_t>(in.uint(8)));
    Tensor& t = payload.params.add(name, dims);
    for (auto& v : t.data) v = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(in.uint(4))));
  }
  return payload;
}

}  // namespace planwrite::nn
