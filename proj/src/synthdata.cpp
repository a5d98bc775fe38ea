#include "owss/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "owss/errors.hpp"
#include "owss/io.hpp"
#include "owss/rng.hpp"

namespace owss {

namespace {

enum class ShapeKind { Disk, Square, Triangle, Stripe, Ring, Cross };

ShapeKind parse_shape(const std::string& name) {
  if (name == "disk") return ShapeKind::Disk;
  if (name == "square") return ShapeKind::Square;
  if (name == "triangle") return ShapeKind::Triangle;
  if (name == "stripe") return ShapeKind::Stripe;
  if (name == "ring") return ShapeKind::Ring;
  if (name == "cross") return ShapeKind::Cross;
  throw UsageError("scene spec: unknown shape name '" + name + "'");
}

bool inside_shape(ShapeKind kind, int dy, int dx, int r) {
  switch (kind) {
    case ShapeKind::Disk:
      return dy * dy + dx * dx <= r * r;
    case ShapeKind::Square:
      return std::abs(dy) <= r && std::abs(dx) <= r;
    case ShapeKind::Triangle:
      // upward isosceles: widens from the top row to the base
      return dy >= -r && dy <= r && 2 * std::abs(dx) <= dy + r;
    case ShapeKind::Stripe:
      // diagonal bar, half-width 2
      return std::abs(dy) <= r && std::abs(dx) <= r && std::abs(dx - dy) <= 2;
    case ShapeKind::Ring: {
      const int d2 = dy * dy + dx * dx;
      const int inner = std::max(1, r - 2);
      return d2 <= r * r && d2 > inner * inner;
    }
    case ShapeKind::Cross:
      return (std::abs(dx) <= 2 && std::abs(dy) <= r) ||
             (std::abs(dy) <= 2 && std::abs(dx) <= r);
  }
  return false;
}

uint8_t clamp_byte(double v) {
  return static_cast<uint8_t>(std::min(255.0, std::max(0.0, std::round(v))));
}

struct Canvas {
  int h, w;
  std::vector<uint8_t> rgb;
  std::vector<uint8_t> labels;
  std::vector<uint8_t> mask;  // scratch
};

void draw_object(Canvas& cv, const SceneSpec& spec, ShapeKind kind,
                 const std::array<double, 3>& color, uint8_t label, int cy,
                 int cx, int r, Rng& rng) {
  std::fill(cv.mask.begin(), cv.mask.end(), 0);
  for (int y = std::max(0, cy - r); y <= std::min(cv.h - 1, cy + r); ++y)
    for (int x = std::max(0, cx - r); x <= std::min(cv.w - 1, cx + r); ++x)
      if (inside_shape(kind, y - cy, x - cx, r)) cv.mask[y * cv.w + x] = 1;
  for (int y = 0; y < cv.h; ++y)
    for (int x = 0; x < cv.w; ++x) {
      if (!cv.mask[y * cv.w + x]) continue;
      cv.labels[y * cv.w + x] = label;
      for (int c = 0; c < 3; ++c)
        cv.rgb[(y * cv.w + x) * 3 + c] =
            clamp_byte(color[c] + spec.noise_sigma * rng.gaussian());
    }
  // one-pixel void margin around the object
  for (int y = 0; y < cv.h; ++y)
    for (int x = 0; x < cv.w; ++x) {
      if (cv.mask[y * cv.w + x]) continue;
      bool touches = false;
      for (int dy = -1; dy <= 1 && !touches; ++dy)
        for (int dx = -1; dx <= 1 && !touches; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny >= 0 && ny < cv.h && nx >= 0 && nx < cv.w &&
              cv.mask[ny * cv.w + nx])
            touches = true;
        }
      if (touches) cv.labels[y * cv.w + x] = kVoidLabel;
    }
}

int split_tag(SplitKind kind) {
  switch (kind) {
    case SplitKind::Train: return 1;
    case SplitKind::Val: return 2;
    case SplitKind::Test: return 3;
  }
  return 0;
}

}  // namespace

std::string split_name(SplitKind kind) {
  switch (kind) {
    case SplitKind::Train: return "train";
    case SplitKind::Val: return "val";
    case SplitKind::Test: return "test";
  }
  return "?";
}

SceneSpec default_scene_spec(int num_known, int height, int width,
                             uint64_t seed) {
  if (num_known < 2 || num_known > 4)
    throw UsageError("scene spec: default palette supports K in [2, 4]");
  SceneSpec spec;
  spec.height = height;
  spec.width = width;
  spec.seed = seed;
  const std::vector<ShapeClass> palette = {
      {"disk", {200, 60, 60}},
      {"square", {60, 200, 60}},
      {"triangle", {60, 60, 200}},
      {"stripe", {200, 200, 60}},
  };
  spec.known.assign(palette.begin(), palette.begin() + num_known);
  // Unknown colors: 0.8/0.2 blends of two known colors, leaning toward the
  // shape's geometric sibling, about one noise sigma away from it.
  auto blend = [&](int a, int b) {
    a = std::min(a, num_known - 1);
    b = std::min(b, num_known - 1);
    std::array<double, 3> c;
    for (int i = 0; i < 3; ++i)
      c[i] = 0.8 * spec.known[a].color[i] + 0.2 * spec.known[b].color[i];
    return c;
  };
  spec.unknown = {{"ring", blend(0, 2)}, {"cross", blend(3, 1)}};
  return spec;
}

ClassManifest manifest_for(const SceneSpec& spec) {
  const int k = static_cast<int>(spec.known.size());
  auto nearest_known = [&](const std::array<double, 3>& color, int exclude) {
    int best = 0;
    double best_d = 1e300;
    for (int i = 0; i < k; ++i) {
      if (i == exclude) continue;
      double d = 0;
      for (int c = 0; c < 3; ++c) {
        const double diff = color[c] - spec.known[i].color[c];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best + 1;
  };
  ClassManifest m;
  for (int i = 0; i < k; ++i)
    m.classes.push_back({i + 1, spec.known[i].shape, true,
                         nearest_known(spec.known[i].color, i)});
  for (size_t j = 0; j < spec.unknown.size(); ++j)
    m.classes.push_back({k + 1 + static_cast<int>(j), spec.unknown[j].shape,
                         false, nearest_known(spec.unknown[j].color, -1)});
  return m;
}

SegScene render_scene(const SceneSpec& spec, SplitKind split, int index) {
  if (spec.known.empty()) throw UsageError("scene spec: no known classes");
  for (const auto& s : spec.known) parse_shape(s.shape);
  for (const auto& s : spec.unknown) parse_shape(s.shape);
  {
    // color separation self-check: known means >= 3 sigma apart
    for (size_t a = 0; a < spec.known.size(); ++a)
      for (size_t b = a + 1; b < spec.known.size(); ++b) {
        double d = 0;
        for (int c = 0; c < 3; ++c) {
          const double diff = spec.known[a].color[c] - spec.known[b].color[c];
          d += diff * diff;
        }
        if (std::sqrt(d) < 3.0 * spec.noise_sigma)
          throw UsageError(
              "scene spec: known class colors closer than 3 noise sigma");
      }
  }

  Rng rng(hash_combine(hash_combine(spec.seed, split_tag(split)), index));
  Canvas cv;
  cv.h = spec.height;
  cv.w = spec.width;
  cv.rgb.resize(static_cast<size_t>(cv.h) * cv.w * 3);
  cv.labels.assign(static_cast<size_t>(cv.h) * cv.w, kVoidLabel);
  cv.mask.resize(static_cast<size_t>(cv.h) * cv.w);
  for (int p = 0; p < cv.h * cv.w; ++p)
    for (int c = 0; c < 3; ++c)
      cv.rgb[p * 3 + c] =
          clamp_byte(spec.background[c] + spec.noise_sigma * rng.gaussian());

  const int m = std::min(cv.h, cv.w);
  const int rmin = std::max(3, m / 8), rmax = std::max(rmin + 1, m / 4);
  auto place = [&](int r) {
    const int cy = rng.uniform_int(r + 1, cv.h - r - 2);
    const int cx = rng.uniform_int(r + 1, cv.w - r - 2);
    return std::pair<int, int>(cy, cx);
  };

  const int n_obj = rng.uniform_int(spec.min_objects, spec.max_objects);
  for (int o = 0; o < n_obj; ++o) {
    const int cls = rng.uniform_int(0, static_cast<int>(spec.known.size()) - 1);
    const int r = rng.uniform_int(rmin, rmax);
    auto [cy, cx] = place(r);
    draw_object(cv, spec, parse_shape(spec.known[cls].shape),
                spec.known[cls].color, static_cast<uint8_t>(cls + 1), cy, cx, r,
                rng);
  }
  if (split == SplitKind::Test && !spec.unknown.empty()) {
    const int j = rng.uniform_int(0, static_cast<int>(spec.unknown.size()) - 1);
    const int r = rng.uniform_int(rmin + 1, rmax);
    auto [cy, cx] = place(r);
    draw_object(cv, spec, parse_shape(spec.unknown[j].shape),
                spec.unknown[j].color,
                static_cast<uint8_t>(spec.known.size() + 1 + j), cy, cx, r, rng);
  }

  // void image border
  for (int b = 0; b < spec.void_border; ++b) {
    for (int x = 0; x < cv.w; ++x) {
      cv.labels[b * cv.w + x] = kVoidLabel;
      cv.labels[(cv.h - 1 - b) * cv.w + x] = kVoidLabel;
    }
    for (int y = 0; y < cv.h; ++y) {
      cv.labels[y * cv.w + b] = kVoidLabel;
      cv.labels[y * cv.w + (cv.w - 1 - b)] = kVoidLabel;
    }
  }

  SegScene out;
  out.height = cv.h;
  out.width = cv.w;
  out.rgb = std::move(cv.rgb);
  out.labels = std::move(cv.labels);
  return out;
}

void generate(const SceneSpec& spec, int count, SplitKind split,
              const std::string& dataset_dir) {
  if (count < 1) throw UsageError("generate: count must be >= 1");
  const std::string dir = dataset_dir + "/" + split_name(split);
  ensure_dir(dir + "/images");
  ensure_dir(dir + "/labels");
  for (int i = 0; i < count; ++i) {
    const SegScene scene = render_scene(spec, split, i);
    write_ppm(scene_image_path(dir, i), scene.height, scene.width, scene.rgb);
    write_pgm(scene_label_path(dir, i), scene.height, scene.width,
              scene.labels);
  }
}

}  // namespace owss
