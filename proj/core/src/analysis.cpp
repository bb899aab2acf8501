#include "fsvfm/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "fsvfm/errors.hpp"
#include "fsvfm/kv_config.hpp"

namespace fsvfm {

namespace {
double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void check_trace(const AttentionTrace& trace) {
  if (trace.n_layers() == 0 || trace.batch() == 0) throw StateError("attention trace is empty");
}
}  // namespace

double AttentionSummary::layer_mean_distance(int layer) const {
  return mean_of(mean_distance.at(static_cast<std::size_t>(layer)));
}

double AttentionSummary::layer_mean_kl(int layer) const { return mean_of(mean_kl.at(static_cast<std::size_t>(layer))); }

std::string AttentionSummary::to_tsv() const {
  std::string out = "layer\thead\tmean_distance\tmean_kl\n";
  for (int l = 0; l < n_layers(); ++l) {
    const auto li = static_cast<std::size_t>(l);
    const std::size_t heads = std::max(li < mean_distance.size() ? mean_distance[li].size() : 0,
                                       li < mean_kl.size() ? mean_kl[li].size() : 0);
    for (std::size_t h = 0; h < heads; ++h) {
      const double d = li < mean_distance.size() ? mean_distance[li].at(h) : 0.0;
      const double k = li < mean_kl.size() ? mean_kl[li].at(h) : 0.0;
      out += std::to_string(l) + "\t" + std::to_string(h) + "\t" + kv_format_double(d) + "\t" + kv_format_double(k) + "\n";
    }
  }
  return out;
}

Matrix patch_attention(const Matrix& probs, bool has_cls) {
  if (!has_cls) return probs;
  Matrix a = probs.bottomRightCorner(probs.rows() - 1, probs.cols() - 1);
  for (Index r = 0; r < a.rows(); ++r) {
    const double s = a.row(r).sum();
    if (s > 0) a.row(r) /= s;
  }
  return a;
}

AttentionSummary mean_attention_distance(const AttentionTrace& trace, int grid, int patch_size) {
  check_trace(trace);
  AttentionSummary out;
  for (int l = 0; l < trace.n_layers(); ++l) {
    const auto& per_sample = trace.probs[static_cast<std::size_t>(l)];
    const std::size_t heads = per_sample.at(0).size();
    std::vector<double> dist(heads, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      double acc = 0.0;
      double count = 0.0;
      for (std::size_t b = 0; b < per_sample.size(); ++b) {
        const Matrix a = patch_attention(per_sample[b].at(h), trace.has_cls);
        const auto& pos = trace.positions[b];
        if (static_cast<Index>(pos.size()) != a.rows()) throw StateError("trace positions do not match attention size");
        for (Index q = 0; q < a.rows(); ++q) {
          const int pq = pos[static_cast<std::size_t>(q)];
          double row = 0.0;
          for (Index k = 0; k < a.cols(); ++k) {
            const int pk = pos[static_cast<std::size_t>(k)];
            const double dy = (pq / grid - pk / grid) * static_cast<double>(patch_size);
            const double dx = (pq % grid - pk % grid) * static_cast<double>(patch_size);
            row += a(q, k) * std::sqrt(dx * dx + dy * dy);
          }
          acc += row;
          count += 1.0;
        }
      }
      dist[h] = count > 0 ? acc / count : 0.0;
    }
    out.mean_distance.push_back(std::move(dist));
  }
  return out;
}

double row_kl(const Eigen::Ref<const Matrix>& p, const Eigen::Ref<const Matrix>& q, double clamp) {
  double kl = 0.0;
  for (Index k = 0; k < p.size(); ++k) {
    const double pk = p.data()[k];
    if (pk <= 0) continue;
    kl += pk * (std::log(std::max(pk, clamp)) - std::log(std::max(q.data()[k], clamp)));
  }
  return kl;
}

AttentionSummary head_kl_diversity(const AttentionTrace& trace, double clamp) {
  check_trace(trace);
  AttentionSummary out;
  for (int l = 0; l < trace.n_layers(); ++l) {
    const auto& per_sample = trace.probs[static_cast<std::size_t>(l)];
    const std::size_t heads = per_sample.at(0).size();
    std::vector<double> kl(heads, 0.0);
    for (std::size_t b = 0; b < per_sample.size(); ++b) {
      std::vector<Matrix> a;
      for (std::size_t h = 0; h < heads; ++h) a.push_back(patch_attention(per_sample[b][h], trace.has_cls));
      for (std::size_t h = 0; h < heads; ++h) {
        double acc = 0.0;
        for (std::size_t o = 0; o < heads; ++o) {
          if (o == h) continue;
          for (Index q = 0; q < a[h].rows(); ++q) acc += row_kl(a[h].row(q), a[o].row(q), clamp);
        }
        const double pairs = static_cast<double>(heads - 1) * static_cast<double>(a[h].rows());
        if (pairs > 0) kl[h] += acc / pairs;
      }
    }
    for (auto& v : kl) v /= static_cast<double>(per_sample.size());
    out.mean_kl.push_back(std::move(kl));
  }
  return out;
}

AttentionSummary summarize_attention(const AttentionTrace& trace, int grid, int patch_size) {
  AttentionSummary s = mean_attention_distance(trace, grid, patch_size);
  s.mean_kl = head_kl_diversity(trace).mean_kl;
  return s;
}

AttentionTrace capture_attention(const VisionEncoder& encoder, const std::vector<Matrix>& patch_sets,
                                 const BlockHook* hook) {
  AttentionTrace trace;
  for (const auto& p : patch_sets) {
    std::vector<std::vector<Matrix>> layers;
    TokenSet t = encoder.embed_full(p);
    encoder.encode(t, &layers, hook);
    trace.add_sample(std::move(layers), t.positions, t.has_cls);
  }
  return trace;
}

Matrix attention_mass(const AttentionTrace& trace, int layer, int sample, int grid) {
  check_trace(trace);
  if (layer < 0) layer += trace.n_layers();
  if (layer < 0 || layer >= trace.n_layers()) throw StateError("attention layer out of range");
  const auto& heads = trace.probs[static_cast<std::size_t>(layer)].at(static_cast<std::size_t>(sample));
  const auto& pos = trace.positions.at(static_cast<std::size_t>(sample));
  Matrix mass = Matrix::Zero(grid, grid);
  for (const auto& probs : heads) {
    const Matrix a = patch_attention(probs, trace.has_cls);
    const Matrix received = a.colwise().sum() / static_cast<double>(a.rows());
    for (Index k = 0; k < received.cols(); ++k) {
      const int p = pos[static_cast<std::size_t>(k)];
      mass(p / grid, p % grid) += received(0, k) / static_cast<double>(heads.size());
    }
  }
  return mass;
}

Matrix upsample_bilinear(const Matrix& m, int height, int width) {
  Matrix out(height, width);
  const double sy = static_cast<double>(m.rows()) / height;
  const double sx = static_cast<double>(m.cols()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(m.rows() - 1));
    const auto y0 = static_cast<Index>(std::floor(fy));
    const Index y1 = std::min<Index>(y0 + 1, m.rows() - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(m.cols() - 1));
      const auto x0 = static_cast<Index>(std::floor(fx));
      const Index x1 = std::min<Index>(x0 + 1, m.cols() - 1);
      const double wx = fx - static_cast<double>(x0);
      out(y, x) = (1 - wy) * ((1 - wx) * m(y0, x0) + wx * m(y0, x1)) + wy * ((1 - wx) * m(y1, x0) + wx * m(y1, x1));
    }
  }
  return out;
}

Heatmap render_heatmap(const Matrix& mass, const Image& image, double alpha) {
  Heatmap h;
  h.mass = mass;
  Matrix up = upsample_bilinear(mass, image.height, image.width);
  const double lo = up.minCoeff();
  const double span = up.maxCoeff() - lo;
  h.overlay = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const double v = span > 0 ? (up(y, x) - lo) / span : 0.0;
      const double heat[3] = {std::min(1.0, 2.0 * v), std::max(0.0, 2.0 * v - 1.0), 0.0};
      for (int c = 0; c < 3; ++c)
        h.overlay.at(y, x, c) = (1.0 - alpha) * std::clamp(image.at(y, x, c), 0.0, 1.0) + alpha * heat[c];
    }
  return h;
}

Heatmap export_attention_map(const VisionEncoder& encoder, const ImageNormalization& norm, const Image& image,
                             const std::filesystem::path& out_ppm, int layer, const BlockHook* hook) {
  const ViTProfile& p = encoder.profile();
  const Matrix patches = patchify_image(normalize_image(image, norm), p.patch_size);
  AttentionTrace trace = capture_attention(encoder, {patches}, hook);
  Heatmap h = render_heatmap(attention_mass(trace, layer, 0, p.grid()), image);
  if (!out_ppm.empty()) {
    if (out_ppm.has_parent_path()) std::filesystem::create_directories(out_ppm.parent_path());
    write_ppm(out_ppm, h.overlay);
  }
  return h;
}

}  // namespace fsvfm
