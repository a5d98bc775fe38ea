#include "owss/io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "owss/openworld.hpp"

namespace fs = std::filesystem;

namespace owss {

namespace {

void append_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void append_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void append_f64(std::vector<uint8_t>& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  append_u64(out, bits);
}

void append_f32(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  append_u32(out, bits);
}

struct Reader {
  const std::vector<uint8_t>& b;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > b.size()) throw DataError("checkpoint: truncated file");
  }
  uint8_t u8() {
    need(1);
    return b[pos++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[pos++]) << (8 * i);
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
    pos += n;
    return s;
  }
  std::vector<uint8_t> bytes(size_t n) {
    need(n);
    std::vector<uint8_t> out(b.begin() + pos, b.begin() + pos + n);
    pos += n;
    return out;
  }
};

void serialize_stats(std::vector<uint8_t>& out, const ClassStats& s) {
  const int k = s.num_classes();
  append_u32(out, static_cast<uint32_t>(k));
  append_u32(out, static_cast<uint32_t>(s.epoch()));
  uint32_t n = 0;
  for (int c = 0; c < k; ++c) n += s.has_snapshot(c);
  append_u32(out, n);
  for (int c = 0; c < k; ++c) {
    if (!s.has_snapshot(c)) continue;
    const auto& e = s.snapshot(c);
    append_u32(out, static_cast<uint32_t>(c));
    append_u64(out, e.count);
    for (double v : e.mean) append_f64(out, v);
    for (double v : e.var) append_f64(out, v);
  }
}

ClassStats deserialize_stats(Reader& r) {
  const int k = static_cast<int>(r.u32());
  const int epoch = static_cast<int>(r.u32());
  ClassStats s(k);
  s.set_epoch(epoch);
  const uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(r.u32());
    if (cls < 0 || cls >= k) throw DataError("checkpoint: bad stats class");
    ClassStats::Snapshot e;
    e.present = true;
    e.count = r.u64();
    e.mean.resize(k);
    e.var.resize(k);
    for (int j = 0; j < k; ++j) e.mean[j] = r.f64();
    for (int j = 0; j < k; ++j) e.var[j] = r.f64();
    s.set_snapshot(cls, std::move(e));
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config: key '" + key + "' expects a bool, got '" + v + "'");
}

double parse_num(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw UsageError("config: key '" + key + "' expects a number, got '" + v +
                     "'");
  }
}

int parse_int(const std::string& v, const std::string& key) {
  const double d = parse_num(v, key);
  const int i = static_cast<int>(d);
  if (static_cast<double>(i) != d)
    throw UsageError("config: key '" + key + "' expects an integer");
  return i;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' ||
                             line.back() == '\t'))
      line.pop_back();
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line = line.substr(start);
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config: line " + std::to_string(lineno) +
                       " is not key=value");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);

    if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_num(val, key));
    else if (key == "K") cfg.num_classes = parse_int(val, key);
    else if (key == "height") cfg.height = parse_int(val, key);
    else if (key == "width") cfg.width = parse_int(val, key);
    else if (key == "epochs") cfg.epochs = parse_int(val, key);
    else if (key == "batch") cfg.batch = parse_int(val, key);
    else if (key == "lr") cfg.lr = parse_num(val, key);
    else if (key == "w1") cfg.w1 = parse_num(val, key);
    else if (key == "w2") cfg.w2 = parse_num(val, key);
    else if (key == "w3") cfg.w3 = parse_num(val, key);
    else if (key == "w4") cfg.w4 = parse_num(val, key);
    else if (key == "xi") cfg.xi = parse_num(val, key);
    else if (key == "delta") cfg.delta = parse_num(val, key);
    else if (key == "tau") cfg.tau = parse_num(val, key);
    else if (key == "eta") cfg.eta = parse_num(val, key);
    else if (key == "strategy") cfg.strategy = val;
    else if (key == "use_cont") cfg.use_cont = parse_bool(val, key);
    else if (key == "dataset_dir") cfg.dataset_dir = val;
    else if (key == "out_dir") cfg.out_dir = val;
    else if (key == "scenes") cfg.scenes = parse_int(val, key);
    else if (key == "val_scenes") cfg.val_scenes = parse_int(val, key);
    else if (key == "test_scenes") cfg.test_scenes = parse_int(val, key);
    else if (key == "dtype") {
      if (val == "float32") cfg.dtype = Dtype::Float32;
      else if (val == "float64") cfg.dtype = Dtype::Float64;
      else throw UsageError("config: dtype must be float32 or float64");
    }
    else if (key == "base_width") cfg.base_width = parse_int(val, key);
    else if (key == "aug_scale") cfg.aug_scale = parse_bool(val, key);
    else if (key == "aug_crop") cfg.aug_crop = parse_bool(val, key);
    else if (key == "aug_flip") cfg.aug_flip = parse_bool(val, key);
    else if (key == "checkpoint_every") cfg.checkpoint_every = parse_int(val, key);
    else if (key == "t_th") cfg.t_th = parse_num(val, key);
    else if (key == "zeta") cfg.zeta = parse_num(val, key);
    else if (key == "rho") cfg.rho = parse_num(val, key);
    else throw UsageError("config: unknown key '" + key + "'");
  }
  if (cfg.num_classes < 2) throw UsageError("config: K must be >= 2");
  if (cfg.epochs < 1) throw UsageError("config: epochs must be >= 1");
  if (cfg.batch < 1) throw UsageError("config: batch must be >= 1");
  if (cfg.lr <= 0) throw UsageError("config: lr must be > 0");
  if (cfg.xi <= 0) throw UsageError("config: xi must be > 0");
  if (cfg.tau <= 0) throw UsageError("config: tau must be > 0");
  if (cfg.w1 < 0 || cfg.w2 < 0 || cfg.w3 < 0 || cfg.w4 < 0)
    throw UsageError("config: loss weights must be >= 0");
  try {
    parse_strategy(cfg.strategy);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  return parse_config_text(read_text_file(path));
}

std::string config_to_text(const RunConfig& cfg) {
  std::ostringstream out;
  out << "seed=" << cfg.seed << "\n";
  out << "K=" << cfg.num_classes << "\n";
  out << "height=" << cfg.height << "\n";
  out << "width=" << cfg.width << "\n";
  out << "epochs=" << cfg.epochs << "\n";
  out << "batch=" << cfg.batch << "\n";
  out << "lr=" << format_double(cfg.lr) << "\n";
  out << "w1=" << format_double(cfg.w1) << "\n";
  out << "w2=" << format_double(cfg.w2) << "\n";
  out << "w3=" << format_double(cfg.w3) << "\n";
  out << "w4=" << format_double(cfg.w4) << "\n";
  out << "xi=" << format_double(cfg.xi) << "\n";
  out << "delta=" << format_double(cfg.delta) << "\n";
  out << "tau=" << format_double(cfg.tau) << "\n";
  out << "eta=" << format_double(cfg.eta) << "\n";
  out << "strategy=" << cfg.strategy << "\n";
  out << "use_cont=" << (cfg.use_cont ? "true" : "false") << "\n";
  out << "dataset_dir=" << cfg.dataset_dir << "\n";
  out << "out_dir=" << cfg.out_dir << "\n";
  out << "scenes=" << cfg.scenes << "\n";
  out << "val_scenes=" << cfg.val_scenes << "\n";
  out << "test_scenes=" << cfg.test_scenes << "\n";
  out << "dtype=" << (cfg.dtype == Dtype::Float32 ? "float32" : "float64")
      << "\n";
  out << "base_width=" << cfg.base_width << "\n";
  out << "aug_scale=" << (cfg.aug_scale ? "true" : "false") << "\n";
  out << "aug_crop=" << (cfg.aug_crop ? "true" : "false") << "\n";
  out << "aug_flip=" << (cfg.aug_flip ? "true" : "false") << "\n";
  out << "checkpoint_every=" << cfg.checkpoint_every << "\n";
  out << "t_th=" << format_double(cfg.t_th) << "\n";
  out << "zeta=" << format_double(cfg.zeta) << "\n";
  out << "rho=" << format_double(cfg.rho) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// images
// ---------------------------------------------------------------------------

namespace {

void write_pnm(const std::string& path, const char* magic, int height,
               int width, const std::vector<uint8_t>& data, size_t channels) {
  if (data.size() != static_cast<size_t>(height) * width * channels)
    throw DataError("pnm write: buffer size mismatch for " + path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("pnm write: cannot open " + path);
  out << magic << "\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("pnm write: short write to " + path);
}

int pnm_token(std::istream& in, const std::string& path) {
  // skips whitespace and '#' comments
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string dummy;
      std::getline(in, dummy);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v;
  if (!(in >> v)) throw DataError("pnm read: bad header in " + path);
  return v;
}

void read_pnm(const std::string& path, const char* magic, int& height,
              int& width, std::vector<uint8_t>& data, size_t channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("pnm read: cannot open " + path);
  char m0, m1;
  in.get(m0);
  in.get(m1);
  if (!in || m0 != magic[0] || m1 != magic[1])
    throw DataError("pnm read: wrong magic in " + path);
  width = pnm_token(in, path);
  height = pnm_token(in, path);
  const int maxval = pnm_token(in, path);
  if (maxval != 255) throw DataError("pnm read: expected maxval 255 in " + path);
  in.get();  // single whitespace after maxval
  data.resize(static_cast<size_t>(height) * width * channels);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size()));
  if (!in) throw DataError("pnm read: truncated pixel data in " + path);
}

}  // namespace

void write_ppm(const std::string& path, int height, int width,
               const std::vector<uint8_t>& rgb) {
  write_pnm(path, "P6", height, width, rgb, 3);
}

void write_pgm(const std::string& path, int height, int width,
               const std::vector<uint8_t>& gray) {
  write_pnm(path, "P5", height, width, gray, 1);
}

void read_ppm(const std::string& path, int& height, int& width,
              std::vector<uint8_t>& rgb) {
  read_pnm(path, "P6", height, width, rgb, 3);
}

void read_pgm(const std::string& path, int& height, int& width,
              std::vector<uint8_t>& gray) {
  read_pnm(path, "P5", height, width, gray, 1);
}

void write_owfm(const std::string& path, int height, int width,
                const std::vector<float>& values) {
  if (values.size() != static_cast<size_t>(height) * width)
    throw DataError("owfm write: buffer size mismatch");
  std::vector<uint8_t> out;
  out.reserve(12 + values.size() * 4);
  out.insert(out.end(), {'O', 'W', 'F', 'M'});
  append_u32(out, static_cast<uint32_t>(height));
  append_u32(out, static_cast<uint32_t>(width));
  for (float v : values) append_f32(out, v);
  write_file_bytes(path, out);
}

void read_owfm(const std::string& path, int& height, int& width,
               std::vector<float>& values) {
  const auto bytes = read_file_bytes(path);
  Reader r{bytes};
  if (r.str(4) != "OWFM") throw DataError("owfm read: wrong magic in " + path);
  height = static_cast<int>(r.u32());
  width = static_cast<int>(r.u32());
  values.resize(static_cast<size_t>(height) * width);
  for (auto& v : values) v = r.f32();
}

// ---------------------------------------------------------------------------
// classes manifest and splits
// ---------------------------------------------------------------------------

void write_classes(const std::string& path, const ClassManifest& manifest) {
  std::ostringstream out;
  for (const auto& c : manifest.classes)
    out << c.id << "\t" << c.name << "\t" << (c.known ? "known" : "unknown")
        << "\t" << c.most_similar << "\n";
  write_text_file(path, out.str());
}

ClassManifest read_classes(const std::string& path) {
  ClassManifest m;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ClassInfo c;
    std::string kind;
    if (!(ls >> c.id >> c.name >> kind >> c.most_similar))
      throw DataError("classes manifest: bad line '" + line + "'");
    if (kind != "known" && kind != "unknown")
      throw DataError("classes manifest: bad kind '" + kind + "'");
    c.known = kind == "known";
    m.classes.push_back(std::move(c));
  }
  if (m.classes.empty()) throw DataError("classes manifest: empty " + path);
  return m;
}

std::string scene_image_path(const std::string& split_dir, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05d.ppm", index);
  return split_dir + "/images/" + buf;
}

std::string scene_label_path(const std::string& split_dir, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05d.pgm", index);
  return split_dir + "/labels/" + buf;
}

SegSplit load_split(const std::string& dataset_dir, const std::string& split) {
  const std::string dir = dataset_dir + "/" + split;
  if (!fs::exists(dir + "/images"))
    throw DataError("dataset split not found: " + dir);
  SegSplit out;
  for (int i = 0;; ++i) {
    const std::string img = scene_image_path(dir, i);
    if (!fs::exists(img)) break;
    SegScene scene;
    int h = 0, w = 0;
    read_ppm(img, h, w, scene.rgb);
    int lh = 0, lw = 0;
    read_pgm(scene_label_path(dir, i), lh, lw, scene.labels);
    if (lh != h || lw != w)
      throw DataError("dataset: image/label size mismatch at index " +
                      std::to_string(i));
    scene.height = h;
    scene.width = w;
    if (out.scenes.empty()) {
      out.height = h;
      out.width = w;
    } else if (out.height != h || out.width != w) {
      throw DataError("dataset: inconsistent scene sizes in " + dir);
    }
    out.scenes.push_back(std::move(scene));
  }
  if (out.scenes.empty()) throw DataError("dataset split is empty: " + dir);
  return out;
}

std::vector<long> label_histogram(const SegSplit& split, int num_known) {
  std::vector<long> counts(num_known, 0);
  for (const auto& s : split.scenes)
    for (uint8_t lab : s.labels)
      if (is_known_label(lab, num_known)) ++counts[lab - 1];
  return counts;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

template <class S>
NamedTensorData pack_tensor(const std::string& name, const Shape& shape,
                            const std::vector<S>& data) {
  NamedTensorData t;
  t.name = name;
  t.dtype = sizeof(S) == 4 ? 0 : 1;
  t.shape = shape;
  t.raw.reserve(data.size() * sizeof(S));
  for (S v : data) {
    if constexpr (sizeof(S) == 4)
      append_f32(t.raw, static_cast<float>(v));
    else
      append_f64(t.raw, static_cast<double>(v));
  }
  return t;
}

template <class S>
std::vector<S> unpack_tensor(const NamedTensorData& t) {
  const uint8_t want = sizeof(S) == 4 ? 0 : 1;
  if (t.dtype != want)
    throw DataError("checkpoint: dtype mismatch for tensor '" + t.name + "'");
  Reader r{t.raw};
  std::vector<S> out(shape_numel(t.shape));
  for (auto& v : out)
    v = sizeof(S) == 4 ? static_cast<S>(r.f32()) : static_cast<S>(r.f64());
  return out;
}

template NamedTensorData pack_tensor<float>(const std::string&, const Shape&,
                                            const std::vector<float>&);
template NamedTensorData pack_tensor<double>(const std::string&, const Shape&,
                                             const std::vector<double>&);
template std::vector<float> unpack_tensor<float>(const NamedTensorData&);
template std::vector<double> unpack_tensor<double>(const NamedTensorData&);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'O', 'W', 'S', 'S'});
  append_u32(out, ckpt.version);
  append_u32(out, static_cast<uint32_t>(ckpt.model.num_classes));
  append_u32(out, static_cast<uint32_t>(ckpt.model.input_channels));
  append_u32(out, static_cast<uint32_t>(ckpt.model.base_width));
  append_u32(out, static_cast<uint32_t>(ckpt.model.depth));
  append_u64(out, ckpt.model.seed);
  out.push_back(ckpt.model_dtype);
  append_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    append_u32(out, static_cast<uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(t.dtype);
    append_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int e : t.shape) append_u32(out, static_cast<uint32_t>(e));
    out.insert(out.end(), t.raw.begin(), t.raw.end());
  }
  serialize_stats(out, ckpt.sem_stats);
  serialize_stats(out, ckpt.cont_stats);
  append_u32(out, ckpt.epoch);
  write_file_bytes(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  Reader r{bytes};
  if (r.str(4) != "OWSS")
    throw DataError("checkpoint: wrong magic in " + path);
  Checkpoint c;
  c.version = r.u32();
  if (c.version != 1)
    throw DataError("checkpoint: unsupported format version " +
                    std::to_string(c.version));
  c.model.num_classes = static_cast<int>(r.u32());
  c.model.input_channels = static_cast<int>(r.u32());
  c.model.base_width = static_cast<int>(r.u32());
  c.model.depth = static_cast<int>(r.u32());
  c.model.seed = r.u64();
  c.model_dtype = r.u8();
  const uint32_t ntensors = r.u32();
  for (uint32_t i = 0; i < ntensors; ++i) {
    NamedTensorData t;
    const uint32_t nl = r.u32();
    t.name = r.str(nl);
    t.dtype = r.u8();
    const uint32_t rank = r.u32();
    t.shape.resize(rank);
    long numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      t.shape[d] = static_cast<int>(r.u32());
      numel *= t.shape[d];
    }
    t.raw = r.bytes(static_cast<size_t>(numel) * (t.dtype == 0 ? 4 : 8));
    c.tensors.push_back(std::move(t));
  }
  c.sem_stats = deserialize_stats(r);
  c.cont_stats = deserialize_stats(r);
  c.epoch = r.u32();
  return c;
}

// ---------------------------------------------------------------------------
// misc
// ---------------------------------------------------------------------------

uint64_t fnv1a64(const std::vector<uint8_t>& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a64_hex(const std::vector<uint8_t>& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

std::string hash_file_hex(const std::string& path) {
  return fnv1a64_hex(read_file_bytes(path));
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<uint8_t> out((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  return out;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& b) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(b.data()),
            static_cast<std::streamsize>(b.size()));
  if (!out) throw DataError("short write to " + path);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw DataError("short write to " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw DataError("cannot create directory " + path);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // trim to the shortest representation that round-trips
  for (int prec = 1; prec <= 17; ++prec) {
    char cand[64];
    std::snprintf(cand, sizeof cand, "%.*g", prec, v);
    if (std::strtod(cand, nullptr) == v) return cand;
  }
  return buf;
}

}  // namespace owss
