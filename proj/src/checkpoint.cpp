#include "newsdistill/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "newsdistill/errors.hpp"

namespace newsdistill {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const char* s, std::size_t n) { out_.append(s, n); }
  std::string take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

void write_values(Writer& w, const Tensor& t) {
  for (double v : t.values()) w.f64(v);
}

void read_values(Reader& r, Tensor& t) {
  for (double& v : t.mutable_values()) v = r.f64();
}

struct Record {
  Shape shape;
  std::size_t index = 0;  // position in the file
};

// Number of layers stored under `prefix`layer.<i>.
std::size_t count_layers(const std::map<std::string, Record>& recs, const std::string& prefix) {
  std::size_t n = 0;
  while (recs.count(layer_prefix(prefix, n + 1) + "attn.wq")) ++n;
  return n;
}

const Shape& shape_of(const std::map<std::string, Record>& recs, const std::string& name) {
  auto it = recs.find(name);
  if (it == recs.end()) throw DataError("checkpoint lacks parameter " + name);
  return it->second.shape;
}

EncoderParams encoder_skeleton(const std::map<std::string, Record>& recs, const std::string& prefix,
                               const RunConfig& cfg) {
  EncoderConfig ec = cfg.encoder;
  const Shape& tok = shape_of(recs, prefix + "embedding.token");
  const Shape& pos = shape_of(recs, prefix + "embedding.position");
  if (tok.size() != 2 || pos.size() != 2) throw DataError("checkpoint embedding records must be matrices");
  ec.vocab_size = tok[0];
  ec.hidden_dim = tok[1];
  ec.max_seq_len = pos[0];
  ec.num_layers = count_layers(recs, prefix);
  if (ec.num_layers == 0) throw DataError("checkpoint encoder " + prefix + " has no layers");
  const Shape& w1 = shape_of(recs, layer_prefix(prefix, 1) + "ffn.w1");
  if (w1.size() != 2) throw DataError("checkpoint ffn.w1 record must be a matrix");
  ec.ffn_dim = w1[1];
  return EncoderParams::zeros(ec);
}

HeadParams head_skeleton(const std::map<std::string, Record>& recs, const std::string& prefix) {
  HeadParams h;
  auto pool = [&](const std::string& p) {
    const Shape& w = shape_of(recs, p + "proj_weight");
    if (w.size() != 2) throw DataError("checkpoint pooling weight must be a matrix");
    PoolingParams out;
    out.proj_weight = Tensor(w, true);
    out.proj_bias = Tensor({w[1]}, true);
    out.query = Tensor({w[1]}, true);
    return out;
  };
  h.pool = pool(prefix + "pool.");
  if (recs.count(prefix + "dense.weight")) {
    const Shape& w = shape_of(recs, prefix + "dense.weight");
    if (w.size() != 2) throw DataError("checkpoint dense weight must be a matrix");
    h.dense = DenseParams{Tensor(w, true), Tensor({w[1]}, true)};
  }
  if (recs.count(prefix + "user.proj_weight")) h.user = pool(prefix + "user.");
  return h;
}

bool has_prefix(const std::map<std::string, Record>& recs, const std::string& prefix) {
  auto it = recs.lower_bound(prefix);
  return it != recs.end() && it->first.starts_with(prefix);
}

}  // namespace

std::string encode_checkpoint(const std::string& config_text, const tasks::TrainState& state) {
  Writer w;
  w.raw("NDCK", 4);
  w.u32(kCheckpointVersion);
  w.str(config_text);
  w.u64(state.pair.map.k);
  w.u64(state.pair.map.n);
  const ParameterList params = state.pair.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.u64(d);
    write_values(w, p.tensor);
  }
  const auto& a = state.adam;
  w.u64(a.step);
  w.f64(a.config.lr);
  w.f64(a.config.beta1);
  w.f64(a.config.beta2);
  w.f64(a.config.eps);
  w.u32(static_cast<std::uint32_t>(a.first_moment.size()));
  for (const auto& [name, m] : a.first_moment) {
    auto it = a.second_moment.find(name);
    if (it == a.second_moment.end()) throw ContractError("Adam state lacks second moment of " + name);
    w.str(name);
    w.u64(m.numel());
    write_values(w, m);
    write_values(w, it->second);
  }
  w.str(state.data_rng.serialize());
  w.str(state.dropout_rng.serialize());
  w.str(state.phase_start_rng.serialize());
  w.i32(state.phase);
  w.u64(state.epoch);
  w.u64(state.global_step);
  w.f64(state.best_metric);
  w.u64(state.best_epoch);
  w.i32(state.best_phase);
  w.u32(static_cast<std::uint32_t>(state.order_digests.size()));
  for (auto d : state.order_digests) w.u64(d);
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.raw(4) != "NDCK") throw DataError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_text = r.str();
  const RunConfig cfg = RunConfig::parse(ck.config_text);
  auto& st = ck.state;
  st.pair.map.k = r.u64();
  st.pair.map.n = r.u64();

  // Shapes first, values after the skeleton exists.
  struct Stored {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };
  std::vector<Stored> stored(r.u32());
  std::map<std::string, Record> recs;
  for (std::size_t i = 0; i < stored.size(); ++i) {
    auto& s = stored[i];
    s.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 4) throw DataError("checkpoint parameter " + s.name + " has rank " + std::to_string(rank));
    for (std::uint32_t d = 0; d < rank; ++d) s.shape.push_back(r.u64());
    s.values.resize(shape_numel(s.shape));
    for (double& v : s.values) v = r.f64();
    if (!recs.emplace(s.name, Record{s.shape, i}).second) throw DataError("duplicate checkpoint parameter " + s.name);
  }

  auto& pair = st.pair;
  if (has_prefix(recs, "teacher.")) pair.teacher = encoder_skeleton(recs, "teacher.", cfg);
  if (has_prefix(recs, "student.")) pair.student = encoder_skeleton(recs, "student.", cfg);
  if (has_prefix(recs, "head.")) {
    pair.teacher_heads = head_skeleton(recs, "head.");
    if (!pair.teacher || !pair.student) throw DataError("shared heads need both a teacher and a student");
    pair.student_heads = pair.teacher_heads;
  } else {
    if (has_prefix(recs, "teacher_head.")) pair.teacher_heads = head_skeleton(recs, "teacher_head.");
    if (has_prefix(recs, "student_head.")) pair.student_heads = head_skeleton(recs, "student_head.");
  }
  const ParameterList params = pair.parameters();
  if (params.size() != stored.size()) {
    throw DataError("checkpoint holds " + std::to_string(stored.size()) + " parameters, model layout expects " +
                    std::to_string(params.size()));
  }
  for (const auto& p : params) {
    auto it = recs.find(p.name);
    if (it == recs.end()) throw DataError("checkpoint lacks parameter " + p.name);
    const Stored& s = stored[it->second.index];
    if (s.shape != p.tensor.shape()) {
      throw DataError("checkpoint parameter " + p.name + " has shape " + shape_to_string(s.shape) + ", expected " +
                      shape_to_string(p.tensor.shape()));
    }
    Tensor t = p.tensor;
    std::copy(s.values.begin(), s.values.end(), t.mutable_values().begin());
  }

  auto& a = st.adam;
  a.step = r.u64();
  a.config.lr = r.f64();
  a.config.beta1 = r.f64();
  a.config.beta2 = r.f64();
  a.config.eps = r.f64();
  std::map<std::string, Shape> param_shapes;
  for (const auto& p : params) param_shapes[p.name] = p.tensor.shape();
  const std::uint32_t moments = r.u32();
  for (std::uint32_t i = 0; i < moments; ++i) {
    const std::string name = r.str();
    const std::uint64_t n = r.u64();
    auto it = param_shapes.find(name);
    if (it == param_shapes.end() || shape_numel(it->second) != n) {
      throw DataError("checkpoint optimizer record " + name + " matches no parameter");
    }
    Tensor m(it->second), v(it->second);
    read_values(r, m);
    read_values(r, v);
    a.first_moment[name] = m;
    a.second_moment[name] = v;
  }
  st.data_rng.restore(r.str());
  st.dropout_rng.restore(r.str());
  st.phase_start_rng.restore(r.str());
  st.phase = r.i32();
  st.epoch = r.u64();
  st.global_step = r.u64();
  st.best_metric = r.f64();
  st.best_epoch = r.u64();
  st.best_phase = r.i32();
  st.order_digests.resize(r.u32());
  for (auto& d : st.order_digests) d = r.u64();
  if (!r.done()) throw DataError("trailing bytes after checkpoint payload");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text,
                     const tasks::TrainState& state) {
  const std::string bytes = encode_checkpoint(config_text, state);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace newsdistill
