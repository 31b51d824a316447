#include "simpgan/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace simpgan {

namespace fs = std::filesystem;

const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain domain_from_name(const std::string& name) {
  if (name == "source") return Domain::source;
  if (name == "target") return Domain::target;
  throw DataError("unknown domain name '" + name + "'");
}

DomainStyle style_preset(const std::string& name) {
  if (name == "null" || name == "none") return DomainStyle{};
  if (name == "bright") {
    DomainStyle s;
    s.brightness = 0.05;
    s.color_cast = {1.05, 1.0, 0.95};
    s.noise_std = 0.02;
    s.blur_radius = 0;
    s.palette_seed = 11;
    return s;
  }
  if (name == "dark") {
    DomainStyle s;
    s.brightness = -0.28;
    s.color_cast = {0.65, 0.75, 1.15};
    s.noise_std = 0.07;
    s.blur_radius = 1;
    s.palette_seed = 29;
    return s;
  }
  throw DataError("unknown style preset '" + name + "'");
}

DomainStyle parse_style(const std::string& text) {
  if (text.find('=') == std::string::npos) return style_preset(text);
  DomainStyle s;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw DataError("style: malformed entry '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::string val = item.substr(eq + 1);
    try {
      if (key == "brightness") {
        s.brightness = std::stod(val);
      } else if (key == "cast") {
        std::stringstream cs(val);
        std::string c;
        for (int i = 0; i < 3; ++i) {
          if (!std::getline(cs, c, ':')) throw DataError("style: cast needs r:g:b");
          s.color_cast[i] = std::stod(c);
        }
      } else if (key == "noise") {
        s.noise_std = std::stod(val);
      } else if (key == "blur") {
        s.blur_radius = std::stoi(val);
      } else if (key == "palette") {
        s.palette_seed = std::stoull(val);
      } else {
        throw DataError("style: unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw DataError("style: bad value '" + val + "' for key '" + key + "'");
    }
  }
  return s;
}

namespace {

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

constexpr float kBaseBackground = 0.5f;

std::uint64_t view_key(int identity, int view) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(identity)) << 20) |
         static_cast<std::uint32_t>(view);
}

}  // namespace

IdentityAppearance identity_appearance(std::uint64_t seed, int identity) {
  Rng rng = Rng(seed).split("identity", static_cast<std::uint64_t>(identity));
  IdentityAppearance a;
  a.torso_rgb = hsv_to_rgb(rng.uniform(), rng.uniform(0.6, 1.0), rng.uniform(0.55, 0.95));
  a.legs_rgb = hsv_to_rgb(rng.uniform(), rng.uniform(0.5, 1.0), rng.uniform(0.35, 0.9));
  const double skin = rng.uniform(0.55, 0.9);
  a.skin_rgb = {skin, skin * rng.uniform(0.75, 0.9), skin * rng.uniform(0.55, 0.75)};
  a.torso_width = rng.uniform(0.45, 0.7);
  a.torso_height = rng.uniform(0.3, 0.4);
  a.leg_length = rng.uniform(0.3, 0.42);
  a.head_radius = rng.uniform(0.085, 0.125);
  return a;
}

BaseRender render_base(std::uint64_t seed, int identity, int view, int height, int width) {
  const IdentityAppearance a = identity_appearance(seed, identity);
  Rng rng = Rng(seed).split("view", view_key(identity, view));

  // Per-view jitter: horizontal shift, overall scale, leg pose.
  const double dx = rng.uniform(-3.0, 3.0);
  const double scale = rng.uniform(0.9, 1.1);
  const double left_swing = rng.uniform(-1.5, 1.5);
  const double right_swing = rng.uniform(-1.5, 1.5);
  const double lean = rng.uniform(-0.8, 0.8);

  const double cx = width * 0.5 + dx;
  const double head_r = a.head_radius * height * scale;
  const double head_cy = height * 0.06 + head_r;
  const double torso_top = head_cy + head_r + 1.0;
  const double torso_h = a.torso_height * height * scale;
  const double torso_w = a.torso_width * width * scale;
  const double hip = torso_top + torso_h;
  const double leg_len = a.leg_length * height * scale;
  const double leg_w = torso_w * 0.34;
  const double leg_gap = torso_w * 0.12;

  BaseRender out;
  out.height = height;
  out.width = width;
  out.rgb.assign(static_cast<std::size_t>(height) * width * 3, kBaseBackground);
  out.mask.assign(static_cast<std::size_t>(height) * width, 0);

  auto put = [&](int x, int y, const std::array<double, 3>& rgb) {
    if (x < 0 || x >= width || y < 0 || y >= height) return;
    const std::size_t p = (static_cast<std::size_t>(y) * width + x) * 3;
    out.rgb[p] = static_cast<float>(rgb[0]);
    out.rgb[p + 1] = static_cast<float>(rgb[1]);
    out.rgb[p + 2] = static_cast<float>(rgb[2]);
    out.mask[static_cast<std::size_t>(y) * width + x] = 1;
  };
  auto fill_rect = [&](double x0, double x1, double y0, double y1,
                       const std::array<double, 3>& rgb) {
    for (int y = std::max(0, (int)std::floor(y0)); y < std::min(height, (int)std::ceil(y1)); ++y) {
      for (int x = std::max(0, (int)std::floor(x0)); x < std::min(width, (int)std::ceil(x1)); ++x) {
        const double px = x + 0.5, py = y + 0.5;
        if (px >= x0 && px < x1 && py >= y0 && py < y1) put(x, y, rgb);
      }
    }
  };

  // Legs first, then torso and head on top.
  const double lx = cx - leg_gap * 0.5 - leg_w + left_swing;
  fill_rect(lx, lx + leg_w, hip, hip + leg_len, a.legs_rgb);
  const double rx = cx + leg_gap * 0.5 + right_swing;
  fill_rect(rx, rx + leg_w, hip, hip + leg_len, a.legs_rgb);

  // Torso leans slightly: interpolate the horizontal center across its rows.
  for (int y = std::max(0, (int)std::floor(torso_top));
       y < std::min(height, (int)std::ceil(hip)); ++y) {
    const double py = y + 0.5;
    if (py < torso_top || py >= hip) continue;
    const double t = (py - torso_top) / std::max(1e-9, torso_h);
    const double row_cx = cx + lean * (t - 0.5);
    for (int x = std::max(0, (int)std::floor(row_cx - torso_w * 0.5));
         x < std::min(width, (int)std::ceil(row_cx + torso_w * 0.5)); ++x) {
      const double px = x + 0.5;
      if (px >= row_cx - torso_w * 0.5 && px < row_cx + torso_w * 0.5) put(x, y, a.torso_rgb);
    }
  }

  for (int y = std::max(0, (int)std::floor(head_cy - head_r));
       y < std::min(height, (int)std::ceil(head_cy + head_r)); ++y) {
    for (int x = std::max(0, (int)std::floor(cx - head_r));
         x < std::min(width, (int)std::ceil(cx + head_r)); ++x) {
      const double ddx = x + 0.5 - cx, ddy = y + 0.5 - head_cy;
      if (ddx * ddx + ddy * ddy <= head_r * head_r) put(x, y, a.skin_rgb);
    }
  }
  return out;
}

std::vector<std::uint8_t> apply_style(const BaseRender& base, const DomainStyle& style,
                                      Rng style_rng) {
  const int h = base.height, w = base.width;
  std::vector<float> img(base.rgb);

  if (style.palette_seed != 0) {
    Rng prng(style.palette_seed);
    std::array<std::array<double, 3>, 5> palette;
    for (auto& color : palette) {
      for (auto& c : color) c = prng.uniform(0.15, 0.85);
    }
    const auto& bg = palette[style_rng.uniform_int(static_cast<int>(palette.size()))];
    for (int i = 0; i < h * w; ++i) {
      if (base.mask[i]) continue;
      img[i * 3] = static_cast<float>(bg[0]);
      img[i * 3 + 1] = static_cast<float>(bg[1]);
      img[i * 3 + 2] = static_cast<float>(bg[2]);
    }
  }

  if (style.blur_radius > 0) {
    const int r = style.blur_radius;
    std::vector<float> blurred(img.size());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        float acc[3] = {0, 0, 0};
        int count = 0;
        for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy) {
          for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
            const std::size_t p = (static_cast<std::size_t>(yy) * w + xx) * 3;
            acc[0] += img[p];
            acc[1] += img[p + 1];
            acc[2] += img[p + 2];
            ++count;
          }
        }
        const std::size_t q = (static_cast<std::size_t>(y) * w + x) * 3;
        for (int c = 0; c < 3; ++c) blurred[q + c] = acc[c] / count;
      }
    }
    img.swap(blurred);
  }

  for (int i = 0; i < h * w; ++i) {
    for (int c = 0; c < 3; ++c) {
      img[i * 3 + c] = static_cast<float>(img[i * 3 + c] * style.color_cast[c] + style.brightness);
    }
  }

  if (style.noise_std > 0) {
    for (auto& v : img) v += static_cast<float>(style_rng.normal(0.0, style.noise_std));
  }

  std::vector<std::uint8_t> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float v = std::clamp(img[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

void Dataset::add(ImageSample sample) {
  if (static_cast<int>(sample.pixels.size()) != height_ * width_ * 3) {
    throw DataError("dataset: sample pixel buffer has " + std::to_string(sample.pixels.size()) +
                    " bytes, expected " + std::to_string(height_ * width_ * 3));
  }
  if (sample.identity < 0) throw DataError("dataset: negative identity");
  num_identities_ = std::max(num_identities_, sample.identity + 1);
  samples_.push_back(std::move(sample));
}

int Dataset::identity(int i) const {
  if (labels_locked_) {
    throw DataError("dataset: identity access while labels are locked (unsupervised contract)");
  }
  return samples_.at(i).identity;
}

Tensor<float> Dataset::image_tensor(int i) const {
  const auto& px = samples_.at(i).pixels;
  std::vector<float> data(static_cast<std::size_t>(3) * height_ * width_);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        data[(static_cast<std::size_t>(c) * height_ + y) * width_ + x] =
            px[(static_cast<std::size_t>(y) * width_ + x) * 3 + c] / 127.5f - 1.0f;
      }
    }
  }
  return Tensor<float>::from({1, 3, height_, width_}, std::move(data));
}

Dataset generate_dataset(const GenSpec& spec) {
  if (spec.num_identities < 2) throw DataError("generate_dataset: need at least 2 identities");
  if (spec.views_per_identity < 2) throw DataError("generate_dataset: need at least 2 views");
  Dataset ds(spec.height, spec.width);
  const Rng root(spec.seed);
  for (int i = 0; i < spec.num_identities; ++i) {
    for (int v = 0; v < spec.views_per_identity; ++v) {
      BaseRender base = render_base(spec.seed, i, v, spec.height, spec.width);
      ImageSample s;
      s.pixels = apply_style(base, spec.style, root.split("style", view_key(i, v)));
      s.identity = i;
      s.domain = spec.domain;
      s.view = v;
      ds.add(std::move(s));
    }
  }
  return ds;
}

namespace {

std::vector<std::vector<int>> indices_by_identity(const Dataset& ds) {
  std::vector<std::vector<int>> by_id(ds.num_identities());
  for (int i = 0; i < ds.size(); ++i) by_id[ds.identity(i)].push_back(i);
  return by_id;
}

}  // namespace

SourcePair sample_source_pair(const Dataset& source, double positive_ratio, Rng& rng) {
  if (!(positive_ratio >= 0.0 && positive_ratio <= 1.0)) {
    throw DataError("sample_source_pair: positive_ratio must be in [0,1]");
  }
  if (source.size() < 2) throw DataError("sample_source_pair: dataset has fewer than 2 samples");
  const auto by_id = indices_by_identity(source);
  std::vector<int> ids_with_samples, ids_with_pairs;
  for (int id = 0; id < static_cast<int>(by_id.size()); ++id) {
    if (!by_id[id].empty()) ids_with_samples.push_back(id);
    if (by_id[id].size() >= 2) ids_with_pairs.push_back(id);
  }
  const bool want_positive = rng.bernoulli(positive_ratio);
  int idx1, idx2;
  if (want_positive) {
    if (ids_with_pairs.empty()) {
      throw DataError("sample_source_pair: no identity has two views for a positive pair");
    }
    const auto& pool = by_id[ids_with_pairs[rng.uniform_int((int)ids_with_pairs.size())]];
    idx1 = pool[rng.uniform_int((int)pool.size())];
    do {
      idx2 = pool[rng.uniform_int((int)pool.size())];
    } while (idx2 == idx1);
  } else {
    if (ids_with_samples.size() < 2) {
      throw DataError("sample_source_pair: dataset with fewer than 2 identities "
                      "cannot produce a negative pair");
    }
    int a = rng.uniform_int((int)ids_with_samples.size());
    int b = rng.uniform_int((int)ids_with_samples.size() - 1);
    if (b >= a) ++b;
    const auto& pa = by_id[ids_with_samples[a]];
    const auto& pb = by_id[ids_with_samples[b]];
    idx1 = pa[rng.uniform_int((int)pa.size())];
    idx2 = pb[rng.uniform_int((int)pb.size())];
  }
  SourcePair pair;
  pair.idx1 = idx1;
  pair.idx2 = idx2;
  pair.img1 = source.image_tensor(idx1);
  pair.img2 = source.image_tensor(idx2);
  pair.label = make_pair_label(source.identity(idx1), source.identity(idx2));
  return pair;
}

PairBatch sample_pair_batch(const Dataset& source, const Dataset& target, double positive_ratio,
                            Rng& rng) {
  PairBatch batch;
  batch.source = sample_source_pair(source, positive_ratio, rng);
  if (target.size() < 2) throw DataError("sample_pair_batch: target has fewer than 2 samples");
  batch.tidx1 = rng.uniform_int(target.size());
  batch.tidx2 = rng.uniform_int(target.size() - 1);
  if (batch.tidx2 >= batch.tidx1) ++batch.tidx2;
  batch.target1 = target.image_tensor(batch.tidx1);
  batch.target2 = target.image_tensor(batch.tidx2);
  return batch;
}

void write_ppm(const std::filesystem::path& path, int width, int height,
               const std::vector<std::uint8_t>& rgb) {
  if (static_cast<int>(rgb.size()) != width * height * 3) {
    throw DataError("write_ppm: buffer size does not match " + std::to_string(width) + "x" +
                    std::to_string(height));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_ppm: cannot open " + path.string());
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw DataError("write_ppm: short write to " + path.string());
}

namespace {

int read_ppm_int(std::istream& in, const fs::path& path) {
  // Skips whitespace and '#' comment lines, per the PPM convention.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) throw DataError("read_ppm: malformed header in " + path.string());
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  if (c != EOF) in.unget();
  return value;
}

}  // namespace

std::vector<std::uint8_t> read_ppm(const std::filesystem::path& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_ppm: missing image file " + path.string());
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') {
    throw DataError("read_ppm: not a binary PPM (P6): " + path.string());
  }
  width = read_ppm_int(in, path);
  height = read_ppm_int(in, path);
  const int maxval = read_ppm_int(in, path);
  if (width <= 0 || height <= 0 || maxval != 255) {
    throw DataError("read_ppm: unsupported header in " + path.string());
  }
  in.get();  // single whitespace byte separating header and raster
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width) * height * 3);
  in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(rgb.size())) {
    throw DataError("read_ppm: truncated raster in " + path.string());
  }
  return rgb;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
  if (!manifest) throw DataError("save_dataset: cannot write manifest in " + dir.string());
  manifest << "file,identity,domain,view\n";
  char name[64];
  for (int i = 0; i < ds.size(); ++i) {
    std::snprintf(name, sizeof(name), "id%04d_v%03d.ppm", ds.identity(i), ds.view(i));
    write_ppm(dir / name, ds.width(), ds.height(), ds.pixels(i));
    manifest << name << ',' << ds.identity(i) << ',' << domain_name(ds.domain(i)) << ','
             << ds.view(i) << '\n';
  }
  if (!manifest) throw DataError("save_dataset: short manifest write in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const fs::path manifest_path = dir / "manifest.csv";
  std::ifstream manifest(manifest_path, std::ios::binary);
  if (!manifest) throw DataError("load_dataset: missing manifest " + manifest_path.string());
  std::string line;
  if (!std::getline(manifest, line) || line != "file,identity,domain,view") {
    throw DataError("load_dataset: row 1: bad manifest header in " + manifest_path.string());
  }
  Dataset ds;
  bool first = true;
  int row = 1;
  while (std::getline(manifest, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string file, identity_s, domain_s, view_s;
    if (!std::getline(ss, file, ',') || !std::getline(ss, identity_s, ',') ||
        !std::getline(ss, domain_s, ',') || !std::getline(ss, view_s)) {
      throw DataError("load_dataset: row " + std::to_string(row) + ": malformed manifest row '" +
                      line + "'");
    }
    ImageSample s;
    try {
      s.identity = std::stoi(identity_s);
      s.view = std::stoi(view_s);
    } catch (const std::exception&) {
      throw DataError("load_dataset: row " + std::to_string(row) + ": non-integer field in '" +
                      line + "'");
    }
    s.domain = domain_from_name(domain_s);
    const fs::path img_path = dir / file;
    if (!fs::exists(img_path)) {
      throw DataError("load_dataset: row " + std::to_string(row) + ": missing image file " +
                      img_path.string());
    }
    int w = 0, h = 0;
    s.pixels = read_ppm(img_path, w, h);
    if (first) {
      ds = Dataset(h, w);
      first = false;
    } else if (w != ds.width() || h != ds.height()) {
      throw DataError("load_dataset: row " + std::to_string(row) + ": image dimensions " +
                      std::to_string(w) + "x" + std::to_string(h) + " mismatch dataset " +
                      std::to_string(ds.width()) + "x" + std::to_string(ds.height()));
    }
    ds.add(std::move(s));
  }
  if (first) throw DataError("load_dataset: manifest has no samples in " + dir.string());
  return ds;
}

}  // namespace simpgan
