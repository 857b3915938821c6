#include "branchsel/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "branchsel/error.hpp"

namespace branchsel {

namespace {

constexpr char kMagic[4] = {'B', 'R', 'S', 'L'};

template <typename T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <typename T>
  void put(T v) {
    v = to_le(v);
    bytes(&v, sizeof(T));
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(const std::vector<double>& xs) {
    for (double x : xs) put<float>(static_cast<float>(x));
  }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}
  void bytes(void* p, std::size_t n) {
    if (pos_ + n > data_.size()) throw IoError(path_ + ": truncated checkpoint");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return to_le(v);
  }
  std::string str(std::size_t limit = 1 << 20) {
    auto n = get<std::uint32_t>();
    if (n > limit) throw IoError(path_ + ": corrupt string length in checkpoint");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::vector<double> floats(std::size_t n) {
    std::vector<double> out(n);
    for (auto& x : out) x = get<float>();
    return out;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model& model, const CheckpointMeta& meta) {
  auto& params = model.params();
  params.quantize_f32();
  nlohmann::json header = {{"model", model.config()},
                           {"train", meta.train},
                           {"rng_state", meta.rng_state},
                           {"epochs_done", meta.epochs_done},
                           {"pretrained", meta.pretrained},
                           {"max_steps", meta.max_steps},
                           {"adam_steps", params.adam_steps()}};
  std::string header_text = header.dump();

  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(header_text.size());
  w.bytes(header_text.data(), header_text.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (auto& [name, t] : params) {
    w.str(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.cols()));
    w.floats(t.data());
    auto& [m, v] = params.adam_moments(name);
    w.floats(m);
    w.floats(v);
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());

  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw IoError(path.string() + ": not a checkpoint file (bad magic)");
  auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  auto header_len = r.get<std::uint64_t>();
  if (header_len > (1u << 30)) throw IoError(path.string() + ": corrupt header length");
  std::string header_text(header_len, '\0');
  r.bytes(header_text.data(), header_len);

  LoadedCheckpoint ck;
  try {
    auto header = nlohmann::json::parse(header_text);
    ck.model = header.at("model").get<ModelConfig>();
    ck.meta.train = header.at("train").get<TrainConfig>();
    ck.meta.rng_state = header.at("rng_state").get<std::string>();
    ck.meta.epochs_done = header.at("epochs_done").get<std::size_t>();
    ck.meta.pretrained = header.at("pretrained").get<bool>();
    ck.meta.max_steps = header.at("max_steps").get<std::size_t>();
    ck.params.set_adam_steps(header.at("adam_steps").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": corrupt checkpoint header (" + e.what() + ")");
  }

  auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(4096);
    auto rows = r.get<std::uint32_t>();
    auto cols = r.get<std::uint32_t>();
    std::size_t n = static_cast<std::size_t>(rows) * cols;
    nn::Tensor t(rows, cols, true);
    t.data() = r.floats(n);
    ck.params.insert(name, std::move(t));
    auto& [m, v] = ck.params.adam_moments(name);
    m = r.floats(n);
    v = r.floats(n);
  }
  if (!r.at_end()) throw IoError(path.string() + ": trailing bytes after the last array");
  return ck;
}

}  // namespace branchsel
