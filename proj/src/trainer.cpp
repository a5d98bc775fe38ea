#include "owss/trainer.hpp"

#include <algorithm>

namespace owss {

namespace {

SegScene scale_nearest(const SegScene& src, int oh, int ow) {
  SegScene out;
  out.height = oh;
  out.width = ow;
  out.rgb.resize(static_cast<size_t>(oh) * ow * 3);
  out.labels.resize(static_cast<size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    const int sy = std::min(src.height - 1, y * src.height / oh);
    for (int x = 0; x < ow; ++x) {
      const int sx = std::min(src.width - 1, x * src.width / ow);
      for (int c = 0; c < 3; ++c)
        out.rgb[(y * ow + x) * 3 + c] = src.rgb[(sy * src.width + sx) * 3 + c];
      out.labels[y * ow + x] = src.labels[sy * src.width + sx];
    }
  }
  return out;
}

SegScene crop(const SegScene& src, int top, int left, int oh, int ow) {
  SegScene out;
  out.height = oh;
  out.width = ow;
  out.rgb.resize(static_cast<size_t>(oh) * ow * 3);
  out.labels.resize(static_cast<size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const int sy = top + y, sx = left + x;
      for (int c = 0; c < 3; ++c)
        out.rgb[(y * ow + x) * 3 + c] = src.rgb[(sy * src.width + sx) * 3 + c];
      out.labels[y * ow + x] = src.labels[sy * src.width + sx];
    }
  return out;
}

}  // namespace

SegScene augment_scene(const SegScene& scene, bool do_scale, bool do_crop,
                       bool do_flip, Rng& rng) {
  const int h = scene.height, w = scene.width;
  SegScene cur = scene;

  if (do_scale) {
    static constexpr double kFactors[] = {1.0, 1.25, 1.5};
    const double f = kFactors[rng.uniform_int(0, 2)];
    if (f != 1.0)
      cur = scale_nearest(cur, static_cast<int>(h * f), static_cast<int>(w * f));
  }
  if (cur.height != h || cur.width != w) {
    const int max_top = cur.height - h, max_left = cur.width - w;
    const int top = do_crop ? rng.uniform_int(0, max_top) : max_top / 2;
    const int left = do_crop ? rng.uniform_int(0, max_left) : max_left / 2;
    cur = crop(cur, top, left, h, w);
  } else if (do_crop) {
    rng.uniform_int(0, 0);  // keep the draw sequence stable
    rng.uniform_int(0, 0);
  }
  if (do_flip && rng.bernoulli(0.5)) {
    SegScene flipped = cur;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int sx = w - 1 - x;
        for (int c = 0; c < 3; ++c)
          flipped.rgb[(y * w + x) * 3 + c] = cur.rgb[(y * w + sx) * 3 + c];
        flipped.labels[y * w + x] = cur.labels[y * w + sx];
      }
    cur = std::move(flipped);
  }
  return cur;
}

}  // namespace owss
