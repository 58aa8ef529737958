#include "gpat/params.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace gpat::ag {

Tensor& ParameterStore::add(const std::string& name, Shape shape, std::vector<double> values) {
  if (params_.count(name) != 0) throw std::invalid_argument("parameter '" + name + "' already registered");
  auto [it, inserted] = params_.emplace(name, Tensor::parameter(std::move(shape), std::move(values)));
  return it->second;
}

Tensor& ParameterStore::add_uniform(const std::string& name, Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return add(name, std::move(shape), std::move(values));
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::size_t ParameterStore::fill_missing_grads() {
  std::size_t filled = 0;
  for (auto& [name, t] : params_) {
    if (t.has_grad()) continue;
    t.impl()->grad.assign(t.numel(), 0.0);
    ++filled;
  }
  return filled;
}

void ParameterStore::adam_step(const AdamConfig& c) {
  for (const auto& [name, t] : params_) {
    if (!t.has_grad()) throw std::logic_error("adam: parameter '" + name + "' has no gradient");
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : params_) {
    Moments& mom = moments_[name];
    if (mom.m.empty()) {
      mom.m.assign(p.numel(), 0.0);
      mom.v.assign(p.numel(), 0.0);
    }
    auto values = p.mutable_data();
    auto grad = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      mom.m[i] = c.beta1 * mom.m[i] + (1.0 - c.beta1) * g;
      mom.v[i] = c.beta2 * mom.v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      values[i] -= c.lr * mhat / (std::sqrt(vhat) + c.epsilon);
    }
    p.zero_grad();
  }
}

// ---- checkpoint ---------------------------------------------------------------

namespace {

constexpr char kMagic[] = "GPATCKPT1";
constexpr std::size_t kMagicLen = 9;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > limit_) throw CheckpointFormatError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, data, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + kMagicLen);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  out.insert(out.end(), ckpt.metadata.begin(), ckpt.metadata.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.records.size()));
  for (const CheckpointRecord& r : ckpt.records) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t d : r.shape) put<std::uint64_t>(out, d);
    for (double v : r.data) put<double>(out, v);
  }
  put<std::uint32_t>(out, crc_of(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagicLen + 4 || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw CheckpointFormatError("checkpoint: missing GPATCKPT1 header");
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (stored != crc_of(bytes.data(), body)) throw CheckpointFormatError("checkpoint: CRC32 mismatch");

  Reader in(bytes, body);
  in.str(kMagicLen);
  Checkpoint ckpt;
  ckpt.metadata = in.str(in.get<std::uint32_t>());
  const std::uint32_t count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = in.str(in.get<std::uint32_t>());
    const std::uint32_t rank = in.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) r.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>()));
    r.data.resize(shape_numel(r.shape));
    for (double& v : r.data) v = in.get<double>();
    ckpt.records.push_back(std::move(r));
  }
  if (in.pos() != body) throw CheckpointFormatError("checkpoint: trailing bytes before CRC");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store, const std::string& metadata) {
  Checkpoint ckpt;
  ckpt.metadata = metadata;
  for (const auto& [name, t] : store.all()) {
    ckpt.records.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  }
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void load_into(const Checkpoint& ckpt, ParameterStore& store) {
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const CheckpointRecord& r : ckpt.records) by_name[r.name] = &r;
  for (auto& [name, t] : store.all()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointMismatch(name, "checkpoint lacks parameter '" + name + "'");
    if (it->second->shape != t.shape()) {
      throw CheckpointMismatch(name, "parameter '" + name + "' has shape " + shape_str(t.shape()) +
                                         " but checkpoint stores " + shape_str(it->second->shape));
    }
  }
  for (const auto& [name, rec] : by_name) {
    if (!store.contains(name)) throw CheckpointMismatch(name, "checkpoint has unknown parameter '" + name + "'");
  }
  for (const auto& [name, rec] : by_name) {
    auto dst = store.get(name).mutable_data();
    std::copy(rec->data.begin(), rec->data.end(), dst.begin());
  }
}

// ---- finite differences -------------------------------------------------------

FdReport finite_difference_report(const std::function<Tensor()>& loss_fn, ParameterStore& params, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  params.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = loss_fn();
    if (!std::isfinite(loss.item())) throw NumericError("finite_difference_check: non-finite loss");
    tape.backward(loss);
  }
  auto eval = [&]() {
    NoGradScope no_grad;
    const double v = loss_fn().item();
    if (!std::isfinite(v)) throw NumericError("finite_difference_check: non-finite loss");
    return v;
  };
  FdReport report;
  double all_diff2 = 0.0, all_a2 = 0.0, all_c2 = 0.0;
  for (const auto& entry : params.all()) {
    Tensor& p = params.get(entry.first);
    const std::vector<double> analytic =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end()) : std::vector<double>(p.numel(), 0.0);
    auto values = p.mutable_data();
    double diff2 = 0.0, a2 = 0.0, c2 = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = eval();
      values[i] = saved - step;
      const double down = eval();
      values[i] = saved;
      const double central = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
      report.elementwise = std::max(report.elementwise, std::abs(analytic[i] - central) / denom);
      diff2 += (analytic[i] - central) * (analytic[i] - central);
      a2 += analytic[i] * analytic[i];
      c2 += central * central;
    }
    all_diff2 += diff2;
    all_a2 += a2;
    all_c2 += c2;
    const double scale = std::sqrt(std::max({a2, c2, 1e-16}));
    const double rel = std::sqrt(diff2) / scale;
    if (rel >= report.tensorwise) {
      report.tensorwise = rel;
      report.worst_tensor = entry.first;
    }
  }
  report.global = std::sqrt(all_diff2) / std::sqrt(std::max({all_a2, all_c2, 1e-16}));
  params.zero_grad();
  return report;
}

double finite_difference_check(const std::function<Tensor()>& loss_fn, ParameterStore& params, double step) {
  return finite_difference_report(loss_fn, params, step).elementwise;
}

}  // namespace gpat::ag
