#include "fsvfm/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fsvfm/errors.hpp"
#include "fsvfm/rng.hpp"

namespace fsvfm {

const char* raw_label_name(RawLabel label) {
  switch (label) {
    case RawLabel::background: return "background";
    case RawLabel::skin: return "skin";
    case RawLabel::hair: return "hair";
    case RawLabel::left_eyebrow: return "left_eyebrow";
    case RawLabel::right_eyebrow: return "right_eyebrow";
    case RawLabel::left_eye: return "left_eye";
    case RawLabel::right_eye: return "right_eye";
    case RawLabel::nose: return "nose";
    case RawLabel::upper_lip: return "upper_lip";
    case RawLabel::inner_mouth: return "inner_mouth";
    case RawLabel::lower_lip: return "lower_lip";
  }
  return "unknown";
}

const char* corruption_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::region_swap: return "region_swap";
    case CorruptionKind::region_color_shift: return "region_color_shift";
    case CorruptionKind::region_blur: return "region_blur";
  }
  return "unknown";
}

CorruptionKind parse_corruption(const std::string& name) {
  if (name == "region_swap") return CorruptionKind::region_swap;
  if (name == "region_color_shift") return CorruptionKind::region_color_shift;
  if (name == "region_blur") return CorruptionKind::region_blur;
  throw ConfigError("unknown corruption kind '" + name + "'");
}

const char* label_name(Label label) { return label == Label::real ? "real" : "fake"; }

std::array<std::size_t, kNumRawLabels> ParsingMap::histogram() const {
  std::array<std::size_t, kNumRawLabels> h{};
  for (std::uint8_t v : labels)
    if (v < kNumRawLabels) ++h[v];
  return h;
}

namespace {

struct Rgb {
  double r, g, b;
  double operator[](int c) const { return c == 0 ? r : (c == 1 ? g : b); }
};

struct FaceGeometry {
  double cx, cy;            // face centre (fractions of image size)
  double skin_ax, skin_ay;  // skin ellipse semi-axes
  double hair_lift;         // vertical offset of hair ellipse
  double eye_dx, eye_dy;
  double brow_dy;
  double nose_dy;
  double mouth_dy;
  double scale;             // global feature scale
};

struct FacePalette {
  Rgb background, skin, hair, brow, eye, nose, lip, inner_mouth;
  double light_x, light_y;  // linear shading direction
};

struct FaceParams {
  FaceGeometry geo;
  FacePalette pal;
};

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb jitter(const Rgb& c, Rng& rng, double amp) {
  return {std::clamp(c.r + rng.uniform(-amp, amp), 0.0, 1.0), std::clamp(c.g + rng.uniform(-amp, amp), 0.0, 1.0),
          std::clamp(c.b + rng.uniform(-amp, amp), 0.0, 1.0)};
}

FaceParams sample_identity(Rng& rng) {
  FaceParams p{};
  p.geo.cx = 0.5 + rng.uniform(-0.03, 0.03);
  p.geo.cy = 0.55 + rng.uniform(-0.03, 0.03);
  p.geo.skin_ax = rng.uniform(0.30, 0.34);
  p.geo.skin_ay = rng.uniform(0.36, 0.40);
  p.geo.hair_lift = rng.uniform(0.08, 0.12);
  p.geo.eye_dx = rng.uniform(0.12, 0.14);
  p.geo.eye_dy = rng.uniform(-0.095, -0.07);
  p.geo.brow_dy = rng.uniform(-0.19, -0.16);
  p.geo.nose_dy = rng.uniform(0.03, 0.05);
  p.geo.mouth_dy = rng.uniform(0.16, 0.18);
  p.geo.scale = rng.uniform(0.93, 1.07);

  p.pal.background = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
  p.pal.skin = jitter(mix(Rgb{0.95, 0.80, 0.70}, Rgb{0.45, 0.30, 0.20}, rng.uniform()), rng, 0.03);
  p.pal.hair = mix(Rgb{0.08, 0.06, 0.05}, Rgb{0.75, 0.60, 0.35}, rng.uniform() * rng.uniform());
  p.pal.brow = {p.pal.hair.r * 0.8, p.pal.hair.g * 0.8, p.pal.hair.b * 0.8};
  p.pal.eye = mix(Rgb{0.15, 0.10, 0.08}, Rgb{0.30, 0.45, 0.55}, rng.uniform());
  p.pal.nose = {p.pal.skin.r * 0.88, p.pal.skin.g * 0.85, p.pal.skin.b * 0.85};
  p.pal.lip = {rng.uniform(0.60, 0.85), rng.uniform(0.20, 0.35), rng.uniform(0.25, 0.40)};
  p.pal.inner_mouth = {rng.uniform(0.15, 0.30), rng.uniform(0.03, 0.08), rng.uniform(0.03, 0.08)};
  double angle = rng.uniform(0.0, 6.283185307179586);
  p.pal.light_x = 0.25 * std::cos(angle);
  p.pal.light_y = 0.25 * std::sin(angle);
  return p;
}

// Small per-frame motion for multi-frame video groups.
FaceParams jitter_frame(FaceParams p, Rng& rng) {
  p.geo.cx += rng.uniform(-0.01, 0.01);
  p.geo.cy += rng.uniform(-0.01, 0.01);
  p.pal.light_x += rng.uniform(-0.03, 0.03);
  p.pal.light_y += rng.uniform(-0.03, 0.03);
  return p;
}

bool in_ellipse(double u, double v, double cx, double cy, double ax, double ay) {
  double du = (u - cx) / ax;
  double dv = (v - cy) / ay;
  return du * du + dv * dv <= 1.0;
}

bool in_rect(double u, double v, double cx, double cy, double hx, double hy) {
  return std::abs(u - cx) <= hx && std::abs(v - cy) <= hy;
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

void render_face(const FaceParams& p, int size, Image& image, ParsingMap& parsing) {
  image = Image(size, size);
  parsing = ParsingMap(static_cast<std::uint32_t>(size), static_cast<std::uint32_t>(size));
  const auto& g = p.geo;
  const double s = g.scale;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size;
      const double v = (y + 0.5) / size;
      RawLabel lab = RawLabel::background;
      if (in_ellipse(u, v, g.cx, g.cy - g.hair_lift, g.skin_ax + 0.05, g.skin_ay + 0.02) &&
          v < g.cy - 0.04)
        lab = RawLabel::hair;
      if (in_ellipse(u, v, g.cx, g.cy, g.skin_ax, g.skin_ay)) lab = RawLabel::skin;
      if (lab == RawLabel::skin) {
        if (in_rect(u, v, g.cx - g.eye_dx, g.cy + g.brow_dy, 0.09 * s, 0.035 * s)) lab = RawLabel::left_eyebrow;
        if (in_rect(u, v, g.cx + g.eye_dx, g.cy + g.brow_dy, 0.09 * s, 0.035 * s)) lab = RawLabel::right_eyebrow;
        if (in_ellipse(u, v, g.cx - g.eye_dx, g.cy + g.eye_dy, 0.085 * s, 0.06 * s)) lab = RawLabel::left_eye;
        if (in_ellipse(u, v, g.cx + g.eye_dx, g.cy + g.eye_dy, 0.085 * s, 0.06 * s)) lab = RawLabel::right_eye;
        if (in_ellipse(u, v, g.cx, g.cy + g.nose_dy, 0.055 * s, 0.09 * s)) lab = RawLabel::nose;
        const double my = g.cy + g.mouth_dy;
        if (in_rect(u, v, g.cx, my, 0.11 * s, 0.02 * s)) lab = RawLabel::upper_lip;
        if (in_rect(u, v, g.cx, my + 0.032 * s, 0.10 * s, 0.012 * s)) lab = RawLabel::inner_mouth;
        if (in_rect(u, v, g.cx, my + 0.069 * s, 0.11 * s, 0.025 * s)) lab = RawLabel::lower_lip;
      }
      Rgb base{};
      switch (lab) {
        case RawLabel::background: base = p.pal.background; break;
        case RawLabel::skin: base = p.pal.skin; break;
        case RawLabel::hair: base = p.pal.hair; break;
        case RawLabel::left_eyebrow:
        case RawLabel::right_eyebrow: base = p.pal.brow; break;
        case RawLabel::left_eye:
        case RawLabel::right_eye: base = p.pal.eye; break;
        case RawLabel::nose: base = p.pal.nose; break;
        case RawLabel::upper_lip:
        case RawLabel::lower_lip: base = p.pal.lip; break;
        case RawLabel::inner_mouth: base = p.pal.inner_mouth; break;
      }
      const double shade = 1.0 + p.pal.light_x * (u - 0.5) * 2.0 + p.pal.light_y * (v - 0.5) * 2.0;
      parsing.at(static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(x)) = static_cast<std::uint8_t>(lab);
      for (int c = 0; c < 3; ++c) image.at(y, x, c) = quantize(base[c] * shade);
    }
  }
}

// Facial regions eligible for corruption, as raw-label groups.
const std::vector<std::vector<std::uint8_t>>& corruptible_regions() {
  static const std::vector<std::vector<std::uint8_t>> regions = {
      {3, 4}, {5, 6}, {7}, {8, 9, 10}, {1}, {2},
  };
  return regions;
}

std::vector<std::size_t> region_pixels(const ParsingMap& map, const std::vector<std::uint8_t>& codes) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < map.labels.size(); ++i)
    if (std::find(codes.begin(), codes.end(), map.labels[i]) != codes.end()) out.push_back(i);
  return out;
}

void apply_color_shift(Image& img, const std::vector<std::size_t>& pixels, Rng& rng) {
  double mean[3] = {0, 0, 0};
  for (std::size_t p : pixels)
    for (int c = 0; c < 3; ++c) mean[c] += img.pixels[p * 3 + c];
  double delta[3];
  for (int c = 0; c < 3; ++c) {
    mean[c] /= static_cast<double>(pixels.size());
    double mag = rng.uniform(0.25, 0.45);
    delta[c] = mean[c] > 0.5 ? -mag : mag;
  }
  // Same-sign shifts only relight the region, which another real identity
  // could show. Flip one channel so the result is a tint off the palette.
  if ((delta[0] > 0) == (delta[1] > 0) && (delta[1] > 0) == (delta[2] > 0)) {
    const int c = static_cast<int>(rng.uniform_index(3));
    delta[c] = -delta[c];
  }
  for (std::size_t p : pixels)
    for (int c = 0; c < 3; ++c) img.pixels[p * 3 + c] = quantize(img.pixels[p * 3 + c] + delta[c]);
}

void apply_swap(Image& img, const Image& donor, const std::vector<std::size_t>& pixels) {
  for (std::size_t p : pixels)
    for (int c = 0; c < 3; ++c) img.pixels[p * 3 + c] = donor.pixels[p * 3 + c];
}

void apply_blur(Image& img, const std::vector<std::size_t>& pixels) {
  const Image src = img;
  const int r = 2;
  for (std::size_t p : pixels) {
    int y = static_cast<int>(p / static_cast<std::size_t>(img.width));
    int x = static_cast<int>(p % static_cast<std::size_t>(img.width));
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      int n = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= img.height || xx >= img.width) continue;
          acc += src.at(yy, xx, c);
          ++n;
        }
      img.at(y, x, c) = quantize(acc / n);
    }
  }
}

std::size_t count_diff(const Image& a, const Image& b, const std::vector<std::size_t>& pixels) {
  std::size_t n = 0;
  for (std::size_t p : pixels)
    for (int c = 0; c < 3; ++c)
      if (a.pixels[p * 3 + c] != b.pixels[p * 3 + c]) {
        ++n;
        break;
      }
  return n;
}

std::string index_id(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05d", prefix, i);
  return buf;
}

}  // namespace

std::vector<FaceSample> generate_synthetic(const SynthConfig& config) {
  if (config.image_size <= 0) throw ConfigError("image_size must be positive");
  if (config.patch_size <= 0 || config.image_size % config.patch_size != 0)
    throw ConfigError("image_size must be divisible by patch_size");
  if (config.n_real < 0 || config.n_fake < 0) throw ConfigError("sample counts must be non-negative");
  if (config.frames_per_video < 1) throw ConfigError("frames_per_video must be >= 1");
  if (config.n_fake > 0) {
    if (config.corruption_kinds.empty()) throw ConfigError("fake samples requested without corruption kinds");
    if (config.n_real == 0) throw ConfigError("fake samples require at least one source real");
    bool swap = std::find(config.corruption_kinds.begin(), config.corruption_kinds.end(),
                          CorruptionKind::region_swap) != config.corruption_kinds.end();
    if (swap && config.n_real < 2) throw ConfigError("region_swap requires at least two reals");
  }

  std::vector<FaceSample> out;
  out.reserve(static_cast<std::size_t>(config.n_real + config.n_fake));
  for (int i = 0; i < config.n_real; ++i) {
    const int group = i / config.frames_per_video;
    Rng id_rng = Rng::derive(config.seed, "identity", {static_cast<std::uint64_t>(group)});
    FaceParams params = sample_identity(id_rng);
    if (config.frames_per_video > 1) {
      Rng frame_rng = Rng::derive(config.seed, "frame", {static_cast<std::uint64_t>(i)});
      params = jitter_frame(params, frame_rng);
    }
    FaceSample s;
    s.sample_id = index_id("real_", i);
    render_face(params, config.image_size, s.image, s.parsing);
    s.label = Label::real;
    s.group_id = index_id("vid_real_", group);
    out.push_back(std::move(s));
  }

  const auto& regions = corruptible_regions();
  for (int i = 0; i < config.n_fake; ++i) {
    Rng rng = Rng::derive(config.seed, "corrupt", {static_cast<std::uint64_t>(i)});
    const int source = i % config.n_real;
    const FaceSample& real = out[static_cast<std::size_t>(source)];
    FaceSample s;
    s.sample_id = index_id("fake_", i);
    s.image = real.image;
    s.parsing = real.parsing;
    s.label = Label::fake;
    // One video of fakes per source video so group structure is preserved.
    s.group_id = index_id("vid_fake_", i / config.frames_per_video);

    CorruptionRecord rec{};
    rec.source_index = source;
    rec.kind = config.corruption_kinds[rng.uniform_index(config.corruption_kinds.size())];
    // Retry until the corruption actually changes a pixel.
    for (int attempt = 0; attempt < 32; ++attempt) {
      rec.region_codes = regions[rng.uniform_index(regions.size())];
      auto pixels = region_pixels(real.parsing, rec.region_codes);
      if (pixels.empty()) continue;
      Image candidate = real.image;
      switch (rec.kind) {
        case CorruptionKind::region_color_shift: apply_color_shift(candidate, pixels, rng); break;
        case CorruptionKind::region_swap: {
          int donor = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(config.n_real - 1)));
          if (donor >= source) ++donor;
          rec.donor_index = donor;
          apply_swap(candidate, out[static_cast<std::size_t>(donor)].image, pixels);
          break;
        }
        case CorruptionKind::region_blur: apply_blur(candidate, pixels); break;
      }
      if (count_diff(candidate, real.image, pixels) > 0) {
        s.image = std::move(candidate);
        break;
      }
    }
    s.corruption = rec;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// FSPM codec

namespace {

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32le(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_parsing(const ParsingMap& map) {
  const std::size_t n = static_cast<std::size_t>(map.height) * map.width;
  if (map.labels.size() != n) throw ShapeError("parsing map label count does not match its dimensions");
  std::vector<std::uint8_t> out;
  out.reserve(kFspmHeaderSize + n);
  out.insert(out.end(), {'F', 'S', 'P', 'M'});
  out.push_back(1);
  put_u32le(out, map.height);
  put_u32le(out, map.width);
  out.insert(out.end(), map.labels.begin(), map.labels.end());
  return out;
}

ParsingMap decode_parsing(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t magic[4] = {'F', 'S', 'P', 'M'};
  for (std::size_t i = 0; i < 4; ++i) {
    if (i >= bytes.size()) throw CodecError(i, "truncated magic");
    if (bytes[i] != magic[i]) throw CodecError(i, "bad magic");
  }
  if (bytes.size() < 5) throw CodecError(4, "truncated version");
  if (bytes[4] != 1) throw CodecError(4, "unknown version " + std::to_string(bytes[4]));
  if (bytes.size() < kFspmHeaderSize) throw CodecError(bytes.size(), "truncated header");
  ParsingMap map;
  map.height = get_u32le(bytes, 5);
  map.width = get_u32le(bytes, 9);
  const std::size_t n = static_cast<std::size_t>(map.height) * map.width;
  if (bytes.size() - kFspmHeaderSize < n) throw CodecError(bytes.size(), "truncated payload");
  if (bytes.size() - kFspmHeaderSize > n) throw CodecError(kFspmHeaderSize + n, "trailing bytes after payload");
  map.labels.assign(bytes.begin() + kFspmHeaderSize, bytes.end());
  return map;
}

void write_fspm(const std::filesystem::path& path, const ParsingMap& map) {
  auto bytes = encode_parsing(map);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError(path.string(), "cannot open for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParsingMap read_fspm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError(path.string(), "missing file");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_parsing(bytes);
  } catch (const CodecError& e) {
    throw IngestionError(path.string(), e.what());
  }
}

// ---------------------------------------------------------------------------
// PPM

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError(path.string(), "cannot open for writing");
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> buf(image.pixels.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

namespace {

std::string next_ppm_token(std::istream& is) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError(path.string(), "missing file");
  if (next_ppm_token(is) != "P6") throw IngestionError(path.string(), "not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_ppm_token(is));
    h = std::stoi(next_ppm_token(is));
    maxval = std::stoi(next_ppm_token(is));
  } catch (const std::exception&) {
    throw IngestionError(path.string(), "malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw IngestionError(path.string(), "unsupported PPM dimensions or depth");
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (is.gcount() != static_cast<std::streamsize>(buf.size())) throw IngestionError(path.string(), "truncated PPM data");
  Image img(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = buf[i] / 255.0;
  return img;
}

// ---------------------------------------------------------------------------
// Manifest datasets

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::optional<Label> parse_label(const std::string& s, const std::string& where) {
  if (s.empty()) return std::nullopt;
  if (s == "real" || s == "0") return Label::real;
  if (s == "fake" || s == "1") return Label::fake;
  throw IngestionError(where, "unknown label '" + s + "'");
}

}  // namespace

std::vector<FaceSample> load_dataset(const std::filesystem::path& root, const std::filesystem::path& manifest) {
  const auto manifest_path = manifest.is_absolute() ? manifest : root / manifest;
  std::ifstream is(manifest_path);
  if (!is) throw IngestionError(manifest_path.string(), "missing manifest");
  std::vector<FaceSample> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() < 2) throw IngestionError(manifest_path.string(), "manifest line needs image and parsing paths");
    auto resolve = [&](const std::string& p) {
      std::filesystem::path pp(p);
      return pp.is_absolute() ? pp : root / pp;
    };
    const auto image_path = resolve(fields[0]);
    const auto parsing_path = resolve(fields[1]);
    FaceSample s;
    s.sample_id = image_path.stem().string();
    s.image = read_ppm(image_path);
    s.parsing = read_fspm(parsing_path);
    if (static_cast<std::uint32_t>(s.image.height) != s.parsing.height ||
        static_cast<std::uint32_t>(s.image.width) != s.parsing.width)
      throw IngestionError(parsing_path.string(), "dimension mismatch between image and parsing map");
    for (std::uint8_t v : s.parsing.labels)
      if (v >= kNumRawLabels) throw IngestionError(parsing_path.string(), "unknown raw label code " + std::to_string(v));
    if (fields.size() > 2) s.label = parse_label(fields[2], manifest_path.string());
    if (fields.size() > 3 && !fields[3].empty()) s.group_id = fields[3];
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const std::filesystem::path& root, const std::vector<FaceSample>& samples,
                   const std::string& manifest_name) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "parsing");
  std::ofstream manifest(root / manifest_name);
  if (!manifest) throw IngestionError((root / manifest_name).string(), "cannot open for writing");
  for (const auto& s : samples) {
    const std::string img_rel = "images/" + s.sample_id + ".ppm";
    const std::string pm_rel = "parsing/" + s.sample_id + ".fspm";
    write_ppm(root / img_rel, s.image);
    write_fspm(root / pm_rel, s.parsing);
    manifest << img_rel << '\t' << pm_rel << '\t' << (s.label ? label_name(*s.label) : "") << '\t'
             << s.group_id.value_or("") << '\n';
  }
}

}  // namespace fsvfm
