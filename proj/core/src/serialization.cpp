#include <bit>
#include <cstring>
#include <fstream>

#include "affectgen/error.hpp"
#include "affectgen/model.hpp"

// Checkpoint layout (little-endian):
//   magic "AFGNLM\0\0", u32 format version
//   u64 layers, heads, embed_dim, context, vocab_size, seed
//   u64 token count, then per token: u32 byte length + bytes
//   u64 tensor count, then per tensor: u32 name length + name, u64 rows,
//   u64 cols, rows*cols f64 in Eigen storage order
namespace affectgen {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'A', 'F', 'G', 'N', 'L', 'M', '\0', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string source) : in_(in), source_(std::move(source)) {}
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw ParseError(source_, 0, "truncated checkpoint");
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = u32();
    if (n > (1u << 20)) throw ParseError(source_, 0, "implausible string length in checkpoint");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  const std::string& source() const { return source_; }

 private:
  std::ifstream& in_;
  std::string source_;
};

}  // namespace

void ReferenceModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  Writer w(out);
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kFormatVersion);
  w.u64(config_.layers);
  w.u64(config_.heads);
  w.u64(config_.embed_dim);
  w.u64(config_.context);
  w.u64(config_.vocab_size);
  w.u64(config_.seed);
  w.u64(vocab_.size());
  for (const auto& tok : vocab_.tokens()) w.str(tok);

  std::uint64_t tensors = 0;
  weights_.for_each([&](std::string_view, const auto&) { ++tensors; });
  w.u64(tensors);
  weights_.for_each([&](std::string_view name, const auto& t) {
    w.str(std::string(name));
    w.u64(static_cast<std::uint64_t>(t.rows()));
    w.u64(static_cast<std::uint64_t>(t.cols()));
    w.bytes(t.data(), static_cast<std::size_t>(t.size()) * sizeof(double));
  });
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

ReferenceModel ReferenceModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  Reader r(in, path.string());
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw ParseError(path.string(), 0, "not an affectgen checkpoint");
  const auto version = r.u32();
  if (version != kFormatVersion) {
    throw ParseError(path.string(), 0, "unsupported checkpoint version " + std::to_string(version));
  }
  ReferenceLMConfig config;
  config.layers = r.u64();
  config.heads = r.u64();
  config.embed_dim = r.u64();
  config.context = r.u64();
  config.vocab_size = r.u64();
  config.seed = r.u64();
  config.validate();

  const auto vocab_count = r.u64();
  if (vocab_count != config.vocab_size) throw ParseError(path.string(), 0, "vocabulary size mismatch");
  std::vector<std::string> tokens;
  tokens.reserve(vocab_count);
  for (std::uint64_t i = 0; i < vocab_count; ++i) tokens.push_back(r.str());

  auto weights = TransformerWeights::zeros(config);
  std::uint64_t expected = 0;
  weights.for_each([&](std::string_view, const auto&) { ++expected; });
  if (r.u64() != expected) throw ParseError(path.string(), 0, "tensor count mismatch");
  weights.for_each([&](std::string_view name, auto& t) {
    const std::string stored = r.str();
    if (stored != name) throw ParseError(r.source(), 0, "expected tensor '" + std::string(name) + "', found '" + stored + "'");
    const auto rows = r.u64();
    const auto cols = r.u64();
    if (rows != static_cast<std::uint64_t>(t.rows()) || cols != static_cast<std::uint64_t>(t.cols())) {
      throw ParseError(r.source(), 0, "shape mismatch for tensor '" + stored + "'");
    }
    r.bytes(t.data(), static_cast<std::size_t>(t.size()) * sizeof(double));
  });
  return ReferenceModel(config, Vocabulary(std::move(tokens)), std::move(weights));
}

}  // namespace affectgen
