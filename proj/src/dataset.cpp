#include "mhsa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mhsa/errors.hpp"
#include "mhsa/random.hpp"

namespace mhsa {

void SyntheticSpec::validate() const {
  if (n_ids < 4) throw ConfigError("data.n_ids must be >= 4");
  if (samples_per_id < 2) throw ConfigError("data.samples_per_id must be >= 2");
  if (test_ids < 2) throw ConfigError("data.test_ids must be >= 2");
  if (query_per_id < 1 || gallery_per_id < 1) throw ConfigError("data.query_per_id and gallery_per_id must be >= 1");
  if (hf == 0 || wf == 0 || channels == 0) throw ConfigError("data grid dims must be >= 1");
  for (double p : {occlusion_prob, query_occlusion_prob, gallery_occlusion_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("occlusion probabilities must lie in [0, 1]");
  }
  if (!(area_min > 0.0 && area_max < 1.0 && area_min <= area_max)) {
    throw ConfigError("occluder area fractions must satisfy 0 < area_min <= area_max < 1");
  }
  if (prototype_std < 0.0 || within_id_std < 0.0 || occluder_std < 0.0) throw ConfigError("stds must be >= 0");
  if (occluder_kinds == 0) throw ConfigError("data.occluder_kinds must be >= 1");
  if (cameras == 0) throw ConfigError("data.cameras must be >= 1");
}

bool LabeledSample::occluded() const {
  return std::any_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
}

double LabeledSample::occluded_fraction() const {
  if (mask.empty()) return 0.0;
  return static_cast<double>(std::count(mask.begin(), mask.end(), std::uint8_t{1})) / static_cast<double>(mask.size());
}

std::vector<int> Split::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.id);
  return out;
}

std::size_t Split::identity_count() const {
  std::set<int> ids;
  for (const auto& s : samples) ids.insert(s.id);
  return ids.size();
}

std::vector<std::uint8_t> occlusion_block(std::size_t hf, std::size_t wf, double area_fraction, std::mt19937_64& rng) {
  const std::size_t j = hf * wf;
  const auto target = static_cast<long>(
      std::clamp<double>(std::round(area_fraction * static_cast<double>(j)), 1.0, static_cast<double>(j)));
  std::vector<std::pair<std::size_t, std::size_t>> exact;
  std::pair<std::size_t, std::size_t> closest{1, 1};
  long best_gap = target - 1;
  for (std::size_t h = 1; h <= hf; ++h)
    for (std::size_t w = 1; w <= wf; ++w) {
      const long area = static_cast<long>(h * w);
      if (area == target) exact.emplace_back(h, w);
      if (std::abs(area - target) < best_gap) {
        best_gap = std::abs(area - target);
        closest = {h, w};
      }
    }
  std::pair<std::size_t, std::size_t> shape = closest;
  if (!exact.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, exact.size() - 1);
    shape = exact[pick(rng)];
  }
  const auto [h, w] = shape;
  std::uniform_int_distribution<std::size_t> top_dist(0, hf - h);
  std::uniform_int_distribution<std::size_t> left_dist(0, wf - w);
  const std::size_t top = top_dist(rng);
  const std::size_t left = left_dist(rng);
  std::vector<std::uint8_t> mask(j, 0);
  for (std::size_t y = top; y < top + h; ++y)
    for (std::size_t x = left; x < left + w; ++x) mask[y * wf + x] = 1;
  return mask;
}

namespace {

struct World {
  const SyntheticSpec& spec;
  std::size_t field_channels;
  std::vector<Tensor> prototypes;  // indexed by identity id
  std::vector<Tensor> occluders;   // 1 x field_channels each
};

// Coarse J x Cf field -> (4hf * 4wf) x Cf image, each cell a 4x4 block.
Tensor upsample4(const Tensor& coarse, std::size_t hf, std::size_t wf) {
  const std::size_t c = coarse.cols();
  const std::size_t w_img = 4 * wf;
  Tensor img({16 * hf * wf, c});
  for (std::size_t y = 0; y < 4 * hf; ++y)
    for (std::size_t x = 0; x < w_img; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) img(y * w_img + x, ch) = coarse((y / 4) * wf + x / 4, ch);
  return img;
}

LabeledSample draw_sample(const World& world, int id, double occlusion_prob, Rng& rng) {
  const SyntheticSpec& spec = world.spec;
  const std::size_t j = spec.pixels();
  std::normal_distribution<double> noise(0.0, spec.within_id_std);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> cam(0, spec.cameras - 1);

  LabeledSample s;
  s.id = id;
  s.cam = static_cast<int>(cam(rng));
  Tensor field = world.prototypes[static_cast<std::size_t>(id)];
  for (double& v : field.values()) v += noise(rng);

  s.mask.assign(j, 0);
  if (unit(rng) < occlusion_prob) {
    std::uniform_real_distribution<double> area(spec.area_min, spec.area_max);
    s.mask = occlusion_block(spec.hf, spec.wf, area(rng), rng);
    std::uniform_int_distribution<std::size_t> kind(0, world.occluders.size() - 1);
    const Tensor& texture = world.occluders[kind(rng)];
    for (std::size_t p = 0; p < j; ++p) {
      if (!s.mask[p]) continue;
      for (std::size_t ch = 0; ch < world.field_channels; ++ch) field(p, ch) = texture[ch] + noise(rng);
    }
  }
  if (spec.image_channels > 0) {
    s.input = upsample4(field, spec.hf, spec.wf);
    for (double& v : s.input.values()) v += noise(rng);
  } else {
    s.input = std::move(field);
  }
  return s;
}

}  // namespace

Dataset generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t cf = spec.image_channels > 0 ? spec.image_channels : spec.channels;
  World world{spec, cf, {}, {}};
  const std::size_t total_ids = spec.n_ids + spec.test_ids;
  for (std::size_t i = 0; i < total_ids; ++i) world.prototypes.push_back(gaussian({spec.pixels(), cf}, spec.prototype_std, rng));
  for (std::size_t k = 0; k < spec.occluder_kinds; ++k) world.occluders.push_back(gaussian({1, cf}, spec.occluder_std, rng));

  Dataset d;
  d.hf = spec.hf;
  d.wf = spec.wf;
  for (std::size_t id = 0; id < spec.n_ids; ++id)
    for (std::size_t n = 0; n < spec.samples_per_id; ++n)
      d.train.samples.push_back(draw_sample(world, static_cast<int>(id), spec.occlusion_prob, rng));
  for (std::size_t t = 0; t < spec.test_ids; ++t) {
    const int id = static_cast<int>(spec.n_ids + t);
    for (std::size_t n = 0; n < spec.query_per_id; ++n)
      d.query.samples.push_back(draw_sample(world, id, spec.query_occlusion_prob, rng));
  }
  for (std::size_t t = 0; t < spec.test_ids; ++t) {
    const int id = static_cast<int>(spec.n_ids + t);
    for (std::size_t n = 0; n < spec.gallery_per_id; ++n)
      d.gallery.samples.push_back(draw_sample(world, id, spec.gallery_occlusion_prob, rng));
  }
  return d;
}

std::vector<NamedTensor> split_to_entries(const Split& split, std::size_t hf, std::size_t wf) {
  if (split.samples.empty()) throw DataError("cannot store an empty split");
  const Shape& in_shape = split.samples.front().input.shape();
  const std::size_t n = split.samples.size();
  const std::size_t j = hf * wf;
  Shape stacked = {n};
  stacked.insert(stacked.end(), in_shape.begin(), in_shape.end());
  Tensor inputs(stacked);
  Tensor ids({n}), cams({n}), masks({n, j});
  const std::size_t per = shape_product(in_shape);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = split.samples[i];
    if (s.input.shape() != in_shape) throw DataError("split samples disagree on input shape");
    if (s.mask.size() != j) throw DataError("sample mask length does not match the grid");
    std::copy(s.input.values().begin(), s.input.values().end(), inputs.values().begin() + static_cast<std::ptrdiff_t>(i * per));
    ids[i] = s.id;
    cams[i] = s.cam;
    for (std::size_t p = 0; p < j; ++p) masks(i, p) = s.mask[p];
  }
  return {{"inputs", std::move(inputs)},
          {"ids", std::move(ids)},
          {"cams", std::move(cams)},
          {"masks", std::move(masks)},
          {"grid", Tensor({2}, {static_cast<double>(hf), static_cast<double>(wf)})}};
}

Split split_from_entries(std::span<const NamedTensor> entries, std::size_t* hf, std::size_t* wf) {
  const Tensor& inputs = find_entry(entries, "inputs");
  const Tensor& ids = find_entry(entries, "ids");
  const Tensor& cams = find_entry(entries, "cams");
  const Tensor& masks = find_entry(entries, "masks");
  const Tensor& grid = find_entry(entries, "grid");
  if (inputs.rank() < 2 || grid.size() != 2) throw DataError("malformed dataset container");
  const std::size_t n = inputs.dim(0);
  if (ids.size() != n || cams.size() != n || masks.rank() != 2 || masks.dim(0) != n) {
    throw DataError("dataset container entries disagree on sample count");
  }
  const auto h = static_cast<std::size_t>(grid[0]), w = static_cast<std::size_t>(grid[1]);
  if (masks.dim(1) != h * w) throw DataError("dataset mask width does not match the grid");
  if (hf) *hf = h;
  if (wf) *wf = w;
  Shape in_shape(inputs.shape().begin() + 1, inputs.shape().end());
  Split split;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledSample s;
    s.input = inputs.slice(i, 1).reshaped(in_shape);
    s.id = static_cast<int>(ids[i]);
    s.cam = static_cast<int>(cams[i]);
    s.mask.resize(h * w);
    for (std::size_t p = 0; p < h * w; ++p) s.mask[p] = masks(i, p) != 0.0 ? 1 : 0;
    split.samples.push_back(std::move(s));
  }
  return split;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_container(dir / "train.mhsa", split_to_entries(data.train, data.hf, data.wf));
  save_container(dir / "query.mhsa", split_to_entries(data.query, data.hf, data.wf));
  save_container(dir / "gallery.mhsa", split_to_entries(data.gallery, data.hf, data.wf));
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  for (const char* name : {"train.mhsa", "query.mhsa", "gallery.mhsa"}) {
    if (!std::filesystem::exists(dir / name)) throw DataError("dataset file missing: " + (dir / name).string());
  }
  d.train = split_from_entries(load_container(dir / "train.mhsa"), &d.hf, &d.wf);
  d.query = split_from_entries(load_container(dir / "query.mhsa"));
  d.gallery = split_from_entries(load_container(dir / "gallery.mhsa"));
  return d;
}

}  // namespace mhsa
