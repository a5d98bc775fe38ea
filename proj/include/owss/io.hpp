#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "owss/data.hpp"
#include "owss/errors.hpp"
#include "owss/net.hpp"
#include "owss/stats.hpp"

namespace owss {

// ---------------------------------------------------------------------------
// run configuration (key=value text)
// ---------------------------------------------------------------------------

enum class Dtype : uint8_t { Float32 = 0, Float64 = 1 };

struct RunConfig {
  uint64_t seed = 7;
  int num_classes = 4;  // K
  int height = 32;
  int width = 32;
  int epochs = 60;
  int batch = 8;
  double lr = 0.004;
  double w1 = 0.9, w2 = 0.1, w3 = 0.5, w4 = 0.5;
  double xi = 1.0;
  double delta = 0.6;
  double tau = 0.1;
  double eta = 0.5;
  std::string strategy = "Gs";
  bool use_cont = true;
  std::string dataset_dir;
  std::string out_dir;
  // dataset generation
  int scenes = 200;
  int val_scenes = 40;
  int test_scenes = 60;
  // training extras
  Dtype dtype = Dtype::Float32;
  int base_width = 16;
  bool aug_scale = true;
  bool aug_crop = true;
  bool aug_flip = true;
  int checkpoint_every = 0;  // 0 = only at the end
  // evaluation extras
  double t_th = 0.5;
  double zeta = 0.2;
  double rho = 0.4;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
// Fixed key order so emitted files are byte-stable.
std::string config_to_text(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// images and score maps
// ---------------------------------------------------------------------------

void write_ppm(const std::string& path, int height, int width,
               const std::vector<uint8_t>& rgb);
void write_pgm(const std::string& path, int height, int width,
               const std::vector<uint8_t>& gray);
void read_ppm(const std::string& path, int& height, int& width,
              std::vector<uint8_t>& rgb);
void read_pgm(const std::string& path, int& height, int& width,
              std::vector<uint8_t>& gray);

// Portable float map: magic "OWFM", u32 height, u32 width, f32 LE data.
void write_owfm(const std::string& path, int height, int width,
                const std::vector<float>& values);
void read_owfm(const std::string& path, int& height, int& width,
               std::vector<float>& values);

// ---------------------------------------------------------------------------
// class manifest and dataset splits
// ---------------------------------------------------------------------------

void write_classes(const std::string& path, const ClassManifest& manifest);
ClassManifest read_classes(const std::string& path);

std::string scene_image_path(const std::string& split_dir, int index);
std::string scene_label_path(const std::string& split_dir, int index);

SegSplit load_split(const std::string& dataset_dir, const std::string& split);

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

struct NamedTensorData {
  std::string name;
  uint8_t dtype = 0;  // 0 = f32, 1 = f64
  Shape shape;
  std::vector<uint8_t> raw;  // little-endian payload
};

struct Checkpoint {
  uint32_t version = 1;
  ModelConfig model;
  uint8_t model_dtype = 0;
  std::vector<NamedTensorData> tensors;
  ClassStats sem_stats;
  ClassStats cont_stats;
  uint32_t epoch = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

template <class S>
NamedTensorData pack_tensor(const std::string& name, const Shape& shape,
                            const std::vector<S>& data);
template <class S>
std::vector<S> unpack_tensor(const NamedTensorData& t);

template <class S>
Checkpoint make_checkpoint(const Model<S>& model, const ClassStats& sem,
                           const ClassStats& cont, uint32_t epoch) {
  Checkpoint c;
  c.model = model.config();
  c.model_dtype = sizeof(S) == 4 ? 0 : 1;
  for (const auto& p : model.params())
    c.tensors.push_back(pack_tensor<S>(p.name, p.shape, p.data));
  c.sem_stats = sem;
  c.cont_stats = cont;
  c.epoch = epoch;
  return c;
}

template <class S>
void restore_model(const Checkpoint& c, Model<S>& model) {
  for (const auto& t : c.tensors) {
    auto* p = model.find_param(t.name);
    if (!p) throw DataError("checkpoint: unexpected tensor '" + t.name + "'");
    if (p->shape != t.shape)
      throw DataError("checkpoint: shape mismatch for '" + t.name + "'");
    p->data = unpack_tensor<S>(t);
  }
}

// ---------------------------------------------------------------------------
// misc
// ---------------------------------------------------------------------------

uint64_t fnv1a64(const std::vector<uint8_t>& bytes);
std::string fnv1a64_hex(const std::vector<uint8_t>& bytes);
std::string hash_file_hex(const std::string& path);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& b);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);
void ensure_dir(const std::string& path);

// Fixed-format float printing (shortest round-trip) for results files.
std::string format_double(double v);

}  // namespace owss
