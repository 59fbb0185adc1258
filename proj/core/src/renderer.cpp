#include "feratt/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "feratt/errors.hpp"
#include "feratt/image.hpp"
#include "feratt/rng.hpp"

namespace fs = std::filesystem;

namespace feratt {

namespace {
constexpr double kLuminanceFloor = 1e-6;
constexpr int kToySize = 96;
constexpr int kToyBackgroundSize = 160;
constexpr int kToyClasses = 8;
}  // namespace

void FaceSample::validate() const {
  require(image.n() == 1 && image.c() == 3, "FaceSample: image must be 1xHxWx3");
  require(mask.n() == 1 && mask.c() == 1, "FaceSample: mask must be 1xHxWx1");
  require(image.h() == mask.h() && image.w() == mask.w(), "FaceSample: mask size mismatch");
  for (size_t i = 0; i < image.size(); ++i)
    require(image[i] >= 0.0 && image[i] <= 1.0, "FaceSample: image values outside [0,1]");
  for (size_t i = 0; i < mask.size(); ++i)
    require(mask[i] == 0.0 || mask[i] == 1.0, "FaceSample: mask must be binary");
}

AugmentationParams::AugmentationParams(double brightness, double contrast, double blur,
                                       double noise)
    : brightness_delta(brightness), contrast_factor(contrast), blur_sigma(blur),
      noise_sigma(noise) {
  require(std::abs(brightness_delta) <= 1.0, "AugmentationParams: |brightness| > 1");
  require(contrast_factor >= 0.0 && contrast_factor <= 10.0, "AugmentationParams: bad contrast");
  require(blur_sigma >= 0.0, "AugmentationParams: negative blur sigma");
  require(noise_sigma >= 0.0, "AugmentationParams: negative noise sigma");
}

FaceSample geometric_transform(const FaceSample& face, const TransformParams& params,
                               int out_size) {
  face.validate();
  if (params.scale <= 0.0)
    throw DegenerateSampleError("geometric_transform: non-positive scale");
  const double theta = params.rotation_deg * M_PI / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double c_out = (out_size - 1) / 2.0;
  const double sx = static_cast<double>(face.image.w()) / out_size;
  const double sy = static_cast<double>(face.image.h()) / out_size;

  FaceSample out;
  out.label = face.label;
  out.id = face.id;
  out.subject = face.subject;
  out.image = Tensor(1, out_size, out_size, 3);
  out.mask = Tensor(1, out_size, out_size, 1);

  long mask_pixels = 0;
  for (int oy = 0; oy < out_size; ++oy) {
    for (int ox = 0; ox < out_size; ++ox) {
      // Inverse map: undo translation, rotation, scale about the center,
      // then resample the source grid onto the output grid.
      double ux = ox - params.translate_x - c_out;
      double uy = oy - params.translate_y - c_out;
      double vx = (cos_t * ux + sin_t * uy) / params.scale;
      double vy = (-sin_t * ux + cos_t * uy) / params.scale;
      double qx = vx + c_out;
      double qy = vy + c_out;
      double src_x = (qx + 0.5) * sx - 0.5;
      double src_y = (qy + 0.5) * sy - 0.5;
      for (int ch = 0; ch < 3; ++ch)
        out.image.at(0, oy, ox, ch) = bilinear_sample(face.image, src_y, src_x, ch);
      double m = bilinear_sample(face.mask, src_y, src_x, 0) > 0.5 ? 1.0 : 0.0;
      out.mask.at(0, oy, ox, 0) = m;
      if (m > 0.0) ++mask_pixels;
    }
  }
  if (mask_pixels == 0)
    throw DegenerateSampleError("geometric_transform: mask mapped outside the frame");
  out.image.clamp(0.0, 1.0);
  return out;
}

Tensor luminance_adjust(const Tensor& face, const Tensor& face_mask,
                        const Tensor& background_region) {
  require(face.n() == 1 && face.c() == 3, "luminance_adjust: face must be 1xHxWx3");
  require(face.h() == background_region.h() && face.w() == background_region.w(),
          "luminance_adjust: region size mismatch");
  long covered = 0;
  double face_lum = mean_luminance(face, face_mask, &covered);
  require(covered >= 1, "luminance_adjust: empty mask");
  double region_lum = mean_luminance(background_region, face_mask);
  if (face_lum < kLuminanceFloor)
    throw DivisionGuardError("luminance_adjust: face luminance below 1e-6");
  const double factor = region_lum / face_lum;
  Tensor out(1, face.h(), face.w(), 3);
  for (int y = 0; y < face.h(); ++y)
    for (int x = 0; x < face.w(); ++x) {
      auto ycc = rgb_to_ycbcr(face.at(0, y, x, 0), face.at(0, y, x, 1), face.at(0, y, x, 2));
      auto rgb = ycbcr_to_rgb(ycc[0] * factor, ycc[1], ycc[2]);
      for (int ch = 0; ch < 3; ++ch) out.at(0, y, x, ch) = std::clamp(rgb[ch], 0.0, 1.0);
    }
  return out;
}

Tensor alpha_composite(const Tensor& face, const Tensor& mask, const Tensor& background) {
  require(face.same_shape(background), "alpha_composite: face/background shape mismatch");
  require(mask.n() == face.n() && mask.h() == face.h() && mask.w() == face.w() && mask.c() == 1,
          "alpha_composite: mask shape mismatch");
  Tensor out(face.n(), face.h(), face.w(), face.c());
  const int c = face.c();
  for (size_t i = 0, p = 0; i < face.size(); i += c, ++p) {
    double m = mask[p];
    require(m >= 0.0 && m <= 1.0, "alpha_composite: mask outside [0,1]");
    for (int ch = 0; ch < c; ++ch) out[i + ch] = m * face[i + ch] + (1.0 - m) * background[i + ch];
  }
  return out;
}

Tensor augment(const Tensor& image, const AugmentationParams& params, uint64_t rng_seed) {
  Tensor out = image;
  for (size_t i = 0; i < out.size(); ++i) {
    double v = out[i] + params.brightness_delta;
    out[i] = (v - 0.5) * params.contrast_factor + 0.5;
  }
  out = gaussian_blur(out, params.blur_sigma);
  if (params.noise_sigma > 0.0) {
    Rng rng(rng_seed);
    for (size_t i = 0; i < out.size(); ++i) out[i] += rng.normal(0.0, params.noise_sigma);
  }
  out.clamp(0.0, 1.0);
  return out;
}

// ------------------------------------------------------------------ toy data

int toy_num_classes() { return kToyClasses; }

namespace {

// Class-conditional expression geometry for the procedural faces.
struct ExpressionGeometry {
  double brow_angle;  // degrees, positive tilts outer ends down
  double brow_raise;  // pixels upward
  double eye_open;    // vertical eye radius multiplier
  double mouth_curve; // positive curves corners upward
  double mouth_open;  // vertical mouth opening in pixels
};

ExpressionGeometry expression_geometry(int cls) {
  static const ExpressionGeometry table[kToyClasses] = {
      {0.0, 0.0, 1.0, 0.0, 0.5},     // neutral
      {8.0, 1.0, 1.0, 1.0, 1.5},     // happy
      {-14.0, -1.0, 0.8, -1.0, 0.5}, // sad
      {0.0, 4.0, 1.5, 0.1, 5.0},     // surprise
      {-24.0, -3.0, 0.7, -0.5, 1.0}, // angry
      {-8.0, -2.0, 0.6, -0.7, 2.5},  // disgust
      {10.0, 3.0, 1.4, -0.3, 3.5},   // fear
      {4.0, 0.5, 0.9, 0.4, 0.5},     // contempt (asymmetry added below)
  };
  return table[cls];
}

bool inside_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
  double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

FaceSample toy_face_generator(int class_index, uint64_t rng_seed) {
  require(class_index >= 0 && class_index < kToyClasses, "toy_face_generator: class out of range");
  Rng rng = Rng::substream(rng_seed, 0x7f5a00 + class_index);
  ExpressionGeometry g = expression_geometry(class_index);
  // Seeded jitter keeps samples within one class distinct.
  g.brow_raise += rng.uniform(-0.5, 0.5);
  g.mouth_curve += rng.uniform(-0.15, 0.15);

  const double cx = kToySize / 2.0 + rng.uniform(-2.0, 2.0);
  const double cy = kToySize / 2.0 + 2.0 + rng.uniform(-2.0, 2.0);
  const double rx = 28.0 + rng.uniform(-3.0, 3.0);
  const double ry = 34.0 + rng.uniform(-3.0, 3.0);
  const double skin_r = rng.uniform(0.70, 0.95);
  const double skin_g = skin_r * rng.uniform(0.72, 0.85);
  const double skin_b = skin_g * rng.uniform(0.72, 0.88);
  const double feature = rng.uniform(0.05, 0.2);  // dark feature intensity

  const double eye_dx = 11.0, eye_y = cy - 9.0;
  const double eye_rx = 5.0, eye_ry = 3.2 * g.eye_open;
  const double brow_y = eye_y - 7.0 - g.brow_raise;
  const double brow_slope = std::tan(g.brow_angle * M_PI / 180.0);
  const double mouth_y = cy + 18.0, mouth_half = 10.0;
  // Contempt: one-sided mouth curl.
  const double curl_bias = class_index == 7 ? 0.6 : 0.0;

  FaceSample out;
  out.label = class_index;
  out.id = "toy:" + std::to_string(class_index) + ":" + std::to_string(rng_seed);
  out.subject = "s" + std::to_string(rng_seed);
  out.image = Tensor(1, kToySize, kToySize, 3);
  out.mask = Tensor(1, kToySize, kToySize, 1);

  for (int y = 0; y < kToySize; ++y) {
    for (int x = 0; x < kToySize; ++x) {
      if (!inside_ellipse(x, y, cx, cy, rx, ry)) continue;
      out.mask.at(0, y, x, 0) = 1.0;
      double r = skin_r, gg = skin_g, b = skin_b;

      for (int side = -1; side <= 1; side += 2) {
        double ex = cx + side * eye_dx;
        // Eyebrow: thick slanted bar above the eye.
        double local = (x - ex) * side;  // outward-positive coordinate
        if (std::abs(local) <= 7.0) {
          double by = brow_y + brow_slope * local;
          if (std::abs(y - by) <= 1.6) r = gg = b = feature;
        }
        // Eye white and pupil.
        if (inside_ellipse(x, y, ex, eye_y, eye_rx, eye_ry)) {
          r = gg = b = 0.95;
          if (inside_ellipse(x, y, ex, eye_y, 1.8, std::min(1.8, eye_ry))) r = gg = b = feature;
        }
      }

      // Mouth: parabolic band, plus an open-mouth ellipse.
      double dx = x - cx;
      if (std::abs(dx) <= mouth_half) {
        double t = dx / mouth_half;
        double curve = g.mouth_curve + curl_bias * t;
        double my = mouth_y + curve * 4.0 * (t * t - 0.5);
        if (std::abs(y - my) <= 1.4 + g.mouth_open * 0.5) r = gg = b = feature + 0.15;
        if (g.mouth_open > 1.0 &&
            inside_ellipse(x, y, cx, mouth_y, mouth_half * 0.6, g.mouth_open))
          r = gg = b = feature;
      }

      out.image.at(0, y, x, 0) = std::clamp(r, 0.0, 1.0);
      out.image.at(0, y, x, 1) = std::clamp(gg, 0.0, 1.0);
      out.image.at(0, y, x, 2) = std::clamp(b, 0.0, 1.0);
    }
  }
  return out;
}

BackgroundImage toy_background_generator(uint64_t rng_seed) {
  Rng rng = Rng::substream(rng_seed, 0xb6u);
  const int n = kToyBackgroundSize;
  double c00[3], c01[3], c10[3], c11[3];
  for (int ch = 0; ch < 3; ++ch) {
    c00[ch] = rng.uniform();
    c01[ch] = rng.uniform();
    c10[ch] = rng.uniform();
    c11[ch] = rng.uniform();
  }
  struct Blob { double x, y, r, color[3]; };
  std::vector<Blob> blobs(4);
  for (auto& blob : blobs) {
    blob.x = rng.uniform(0.0, n);
    blob.y = rng.uniform(0.0, n);
    blob.r = rng.uniform(10.0, 40.0);
    for (int ch = 0; ch < 3; ++ch) blob.color[ch] = rng.uniform();
  }
  BackgroundImage out;
  out.id = "toybg:" + std::to_string(rng_seed);
  out.image = Tensor(1, n, n, 3);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double fy = static_cast<double>(y) / (n - 1), fx = static_cast<double>(x) / (n - 1);
      for (int ch = 0; ch < 3; ++ch) {
        double v = (1 - fy) * ((1 - fx) * c00[ch] + fx * c01[ch]) +
                   fy * ((1 - fx) * c10[ch] + fx * c11[ch]);
        for (const auto& blob : blobs) {
          double d2 = (x - blob.x) * (x - blob.x) + (y - blob.y) * (y - blob.y);
          double w = std::exp(-0.5 * d2 / (blob.r * blob.r));
          v = (1 - w) * v + w * blob.color[ch];
        }
        out.image.at(0, y, x, ch) = std::clamp(v, 0.0, 1.0);
      }
    }
  return out;
}

// ----------------------------------------------------------------- rendering

namespace {

bool parse_toy_face_id(const std::string& id, int* cls, uint64_t* seed) {
  if (id.rfind("toy:", 0) != 0) return false;
  size_t sep = id.find(':', 4);
  require(sep != std::string::npos, "malformed toy face id");
  *cls = std::stoi(id.substr(4, sep - 4));
  *seed = std::stoull(id.substr(sep + 1));
  return true;
}

bool parse_toy_background_id(const std::string& id, uint64_t* seed) {
  if (id.rfind("toybg:", 0) != 0) return false;
  *seed = std::stoull(id.substr(6));
  return true;
}

}  // namespace

CompositeSample render_from_provenance(const SampleProvenance& prov,
                                       const std::vector<FaceSample>& faces,
                                       const std::vector<BackgroundImage>& backgrounds) {
  FaceSample face;
  int toy_cls;
  uint64_t toy_seed;
  if (parse_toy_face_id(prov.face_id, &toy_cls, &toy_seed)) {
    face = toy_face_generator(toy_cls, toy_seed);
  } else {
    auto it = std::find_if(faces.begin(), faces.end(),
                           [&](const FaceSample& f) { return f.id == prov.face_id; });
    if (it == faces.end()) throw ConfigurationError("unknown face id: " + prov.face_id);
    face = *it;
  }
  BackgroundImage bg;
  if (parse_toy_background_id(prov.background_id, &toy_seed)) {
    bg = toy_background_generator(toy_seed);
  } else {
    auto it = std::find_if(backgrounds.begin(), backgrounds.end(),
                           [&](const BackgroundImage& b) { return b.id == prov.background_id; });
    if (it == backgrounds.end())
      throw ConfigurationError("unknown background id: " + prov.background_id);
    bg = *it;
  }

  FaceSample warped = geometric_transform(face, prov.transform);
  Tensor region = crop(bg.image, prov.crop_y, prov.crop_x, kOutputSize, kOutputSize);
  Tensor adjusted = luminance_adjust(warped.image, warped.mask, region);
  Tensor composite = alpha_composite(adjusted, warped.mask, region);
  CompositeSample out;
  out.image = augment(composite, prov.augment, prov.seed);
  out.mask = warped.mask;
  out.label = face.label;
  out.seed = prov.seed;
  out.provenance = prov;
  out.provenance.label = face.label;
  out.provenance.subject = face.subject;
  return out;
}

RenderedDataset render_dataset(const std::vector<FaceSample>& faces,
                               const std::vector<BackgroundImage>& backgrounds,
                               int count, uint64_t master_seed) {
  if (count < 0) throw ConfigurationError("render_dataset: negative count");
  if (count > 0 && (faces.empty() || backgrounds.empty()))
    throw ConfigurationError("render_dataset: empty input collections");
  RenderedDataset out;
  out.manifest.master_seed = master_seed;
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::substream(master_seed, static_cast<uint64_t>(i));
    const FaceSample& face = faces[rng.uniform_index(faces.size())];
    const BackgroundImage& bg = backgrounds[rng.uniform_index(backgrounds.size())];
    require(bg.image.h() >= kOutputSize && bg.image.w() >= kOutputSize,
            "render_dataset: background smaller than the output size");
    SampleProvenance prov;
    prov.index = i;
    prov.face_id = face.id;
    prov.background_id = bg.id;
    prov.crop_y = static_cast<int>(rng.uniform_index(bg.image.h() - kOutputSize + 1));
    prov.crop_x = static_cast<int>(rng.uniform_index(bg.image.w() - kOutputSize + 1));
    prov.transform.rotation_deg = rng.uniform(-15.0, 15.0);
    prov.transform.scale = rng.uniform(0.85, 1.1);
    prov.transform.translate_x = rng.uniform(-8.0, 8.0);
    prov.transform.translate_y = rng.uniform(-8.0, 8.0);
    prov.augment = AugmentationParams(rng.uniform(-0.2, 0.2), rng.uniform(0.8, 1.2),
                                      rng.uniform(0.0, 1.5), rng.uniform(0.0, 0.05));
    prov.seed = rng.next_u64();
    out.samples.push_back(render_from_provenance(prov, faces, backgrounds));
    out.manifest.samples.push_back(out.samples.back().provenance);
  }
  return out;
}

// ------------------------------------------------------------- manifest JSON

namespace {

nlohmann::json provenance_to_json(const SampleProvenance& p) {
  return {
      {"index", p.index},
      {"seed", p.seed},
      {"face_id", p.face_id},
      {"background_id", p.background_id},
      {"label", p.label},
      {"subject", p.subject},
      {"crop_x", p.crop_x},
      {"crop_y", p.crop_y},
      {"transform",
       {{"rotation_deg", p.transform.rotation_deg},
        {"scale", p.transform.scale},
        {"translate_x", p.transform.translate_x},
        {"translate_y", p.transform.translate_y}}},
      {"augment",
       {{"brightness_delta", p.augment.brightness_delta},
        {"contrast_factor", p.augment.contrast_factor},
        {"blur_sigma", p.augment.blur_sigma},
        {"noise_sigma", p.augment.noise_sigma}}},
  };
}

SampleProvenance provenance_from_json(const nlohmann::json& j) {
  SampleProvenance p;
  p.index = j.at("index").get<int>();
  p.seed = j.at("seed").get<uint64_t>();
  p.face_id = j.at("face_id").get<std::string>();
  p.background_id = j.at("background_id").get<std::string>();
  p.label = j.at("label").get<int>();
  p.subject = j.at("subject").get<std::string>();
  p.crop_x = j.at("crop_x").get<int>();
  p.crop_y = j.at("crop_y").get<int>();
  const auto& t = j.at("transform");
  p.transform = {t.at("rotation_deg").get<double>(), t.at("scale").get<double>(),
                 t.at("translate_x").get<double>(), t.at("translate_y").get<double>()};
  const auto& a = j.at("augment");
  p.augment = AugmentationParams(a.at("brightness_delta").get<double>(),
                                 a.at("contrast_factor").get<double>(),
                                 a.at("blur_sigma").get<double>(),
                                 a.at("noise_sigma").get<double>());
  return p;
}

std::string sample_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

}  // namespace

std::string DatasetManifest::to_json() const {
  nlohmann::json j;
  j["schema_version"] = schema_version;
  j["master_seed"] = master_seed;
  j["count"] = samples.size();
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : samples) arr.push_back(provenance_to_json(s));
  j["samples"] = arr;
  return j.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  DatasetManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != 1)
    throw VersionMismatchError("unsupported manifest schema version");
  m.master_seed = j.at("master_seed").get<uint64_t>();
  for (const auto& s : j.at("samples")) m.samples.push_back(provenance_from_json(s));
  return m;
}

void save_dataset(const RenderedDataset& dataset, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  for (const auto& s : dataset.samples) {
    std::string name = sample_name(s.provenance.index);
    save_image_png(s.image, (fs::path(dir) / "images" / (name + ".png")).string());
    save_image_png(s.mask, (fs::path(dir) / "masks" / (name + ".png")).string());
  }
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw IoError("cannot write manifest in " + dir);
  f << dataset.manifest.to_json() << "\n";
}

std::vector<CompositeSample> load_dataset(const std::string& dir, DatasetManifest* manifest) {
  std::ifstream f(fs::path(dir) / "manifest.json");
  if (!f) throw IoError("cannot read manifest in " + dir);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  DatasetManifest m = DatasetManifest::from_json(text);
  std::vector<CompositeSample> out;
  for (const auto& prov : m.samples) {
    std::string name = sample_name(prov.index);
    CompositeSample s;
    s.image = load_image_rgb((fs::path(dir) / "images" / (name + ".png")).string());
    s.mask = load_image_gray((fs::path(dir) / "masks" / (name + ".png")).string());
    for (size_t i = 0; i < s.mask.size(); ++i) s.mask[i] = s.mask[i] > 0.5 ? 1.0 : 0.0;
    s.label = prov.label;
    s.seed = prov.seed;
    s.provenance = prov;
    out.push_back(std::move(s));
  }
  if (manifest) *manifest = std::move(m);
  return out;
}

std::vector<FaceSample> load_faces(const std::string& dir) {
  fs::path faces_dir = fs::path(dir) / "faces";
  fs::path masks_dir = fs::path(dir) / "masks";
  if (!fs::is_directory(faces_dir)) throw IoError("missing faces/ directory in " + dir);
  std::vector<std::string> class_names;
  for (const auto& e : fs::directory_iterator(faces_dir))
    if (e.is_directory()) class_names.push_back(e.path().filename().string());
  std::sort(class_names.begin(), class_names.end());
  std::vector<FaceSample> out;
  for (size_t label = 0; label < class_names.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(faces_dir / class_names[label]))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      FaceSample s;
      s.image = load_image_rgb(file.string());
      fs::path mask_path = masks_dir / class_names[label] / file.filename();
      s.mask = load_image_gray(mask_path.string());
      for (size_t i = 0; i < s.mask.size(); ++i) {
        require(s.mask[i] == 0.0 || s.mask[i] == 1.0,
                "load_faces: mask must be binary 0/255 at ingestion");
      }
      s.label = static_cast<int>(label);
      s.id = class_names[label] + "/" + file.filename().string();
      std::string stem = file.stem().string();
      s.subject = stem.substr(0, stem.find('_'));
      s.validate();
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<BackgroundImage> load_backgrounds(const std::string& dir) {
  fs::path bg_dir = fs::path(dir);
  if (fs::is_directory(bg_dir / "backgrounds")) bg_dir /= "backgrounds";
  if (!fs::is_directory(bg_dir)) throw IoError("missing backgrounds directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(bg_dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<BackgroundImage> out;
  for (const auto& file : files) {
    BackgroundImage b;
    b.image = load_image_rgb(file.string());
    if (b.image.h() < kOutputSize || b.image.w() < kOutputSize)
      throw ConfigurationError("background smaller than 128x128: " + file.string());
    b.id = file.filename().string();
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace feratt
