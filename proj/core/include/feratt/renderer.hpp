#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "feratt/tensor.hpp"

namespace feratt {

struct FaceSample {
  Tensor image;  // 1 x H x W x 3 in [0,1]
  Tensor mask;   // 1 x H x W x 1, binary at ingestion
  int label = 0;
  std::string id;       // e.g. "toy:3:17" or "<class>/<file>"
  std::string subject;  // subject identifier for leave-subject-out splits

  void validate() const;
};

struct BackgroundImage {
  Tensor image;  // 1 x Hb x Wb x 3
  std::string id;
};

struct TransformParams {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double translate_x = 0.0;  // pixels in the output frame
  double translate_y = 0.0;
};

struct AugmentationParams {
  double brightness_delta = 0.0;
  double contrast_factor = 1.0;
  double blur_sigma = 0.0;
  double noise_sigma = 0.0;

  AugmentationParams() = default;
  AugmentationParams(double brightness, double contrast, double blur, double noise);
};

// Full recipe for one composite; rendering from it is bit-exact.
struct SampleProvenance {
  int index = 0;
  uint64_t seed = 0;  // augmentation noise stream
  std::string face_id;
  std::string background_id;
  int label = 0;
  std::string subject;
  int crop_x = 0, crop_y = 0;
  TransformParams transform;
  AugmentationParams augment;
};

struct CompositeSample {
  Tensor image;  // 1 x 128 x 128 x 3
  Tensor mask;   // 1 x 128 x 128 x 1
  int label = 0;
  uint64_t seed = 0;
  SampleProvenance provenance;
};

struct DatasetManifest {
  int schema_version = 1;
  uint64_t master_seed = 0;
  std::vector<SampleProvenance> samples;

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& json_text);
};

inline constexpr int kOutputSize = 128;

// Rotation/scale/translation about the frame center, resampled to the
// 128x128 output; face and mask share the map, mask re-binarized at 0.5.
FaceSample geometric_transform(const FaceSample& face, const TransformParams& params,
                               int out_size = kOutputSize);

// Scales the face's luminance channel by mean_lum(region under mask) /
// mean_lum(face under mask); chroma untouched, result clamped to [0,1].
Tensor luminance_adjust(const Tensor& face, const Tensor& face_mask,
                        const Tensor& background_region);

// Per-pixel mask * face + (1 - mask) * background.
Tensor alpha_composite(const Tensor& face, const Tensor& mask, const Tensor& background);

// Brightness, contrast, Gaussian blur, additive Gaussian noise, in that
// order; clamped to [0,1]; deterministic given the seed.
Tensor augment(const Tensor& image, const AugmentationParams& params, uint64_t rng_seed);

// Procedural face-like figure with an exact binary mask; class-conditional
// geometry (brows, mouth, eyes), seeded jitter.
FaceSample toy_face_generator(int class_index, uint64_t rng_seed);
int toy_num_classes();

// Procedural background (smooth gradient plus soft blobs), at least 128px.
BackgroundImage toy_background_generator(uint64_t rng_seed);

// Pure function of the provenance record; used both during generation and
// for bit-exact regeneration. Toy ids are regenerated procedurally,
// otherwise ids are looked up in the provided collections.
CompositeSample render_from_provenance(const SampleProvenance& prov,
                                       const std::vector<FaceSample>& faces,
                                       const std::vector<BackgroundImage>& backgrounds);

struct RenderedDataset {
  std::vector<CompositeSample> samples;
  DatasetManifest manifest;
};

RenderedDataset render_dataset(const std::vector<FaceSample>& faces,
                               const std::vector<BackgroundImage>& backgrounds,
                               int count, uint64_t master_seed);

// Directory layout: images/NNNNNN.png, masks/NNNNNN.png, manifest.json.
void save_dataset(const RenderedDataset& dataset, const std::string& dir);
std::vector<CompositeSample> load_dataset(const std::string& dir, DatasetManifest* manifest = nullptr);

// Input layout: faces/<class>/<id>.png + masks/<class>/<id>.png.
std::vector<FaceSample> load_faces(const std::string& dir);
// backgrounds/<id>.png|jpg; images smaller than 128x128 are rejected.
std::vector<BackgroundImage> load_backgrounds(const std::string& dir);

}  // namespace feratt
