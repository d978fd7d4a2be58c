#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "mhsa/adam.hpp"
#include "mhsa/checkpoint.hpp"
#include "mhsa/config.hpp"
#include "mhsa/errors.hpp"
#include "mhsa/sampler.hpp"
#include "mhsa/train.hpp"
#include "test_util.hpp"

using namespace mhsa;

TEST_CASE("PK sampler: two ids, two instances") {
  const std::vector<int> labels = {7, 7, 7, 3, 3};
  const PkSampler s(labels, {2, 2});
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    std::map<int, int> count;
    for (std::size_t i : s.next_batch(rng)) ++count[labels[i]];
    CHECK(count.size() == 2);
    CHECK(count[7] == 2);
    CHECK(count[3] == 2);
  }
}

TEST_CASE("PK sampler: every id appears exactly K times, without repeats when possible") {
  const auto labels = testutil::pk_labels(20, 10);
  const PkSampler s(labels, {8, 4});
  CHECK(s.batches_per_epoch() == 7);
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto batch = s.next_batch(rng);
    CHECK(batch.size() == 32);
    std::map<int, int> count;
    for (std::size_t i : batch) ++count[labels[i]];
    CHECK(count.size() == 8);
    for (const auto& [id, c] : count) CHECK(c == 4);
    auto sorted = batch;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  }
}

TEST_CASE("PK sampler: full-size batch, replacement, determinism, errors") {
  CHECK(SamplerConfig{32, 4}.batch_size() == 128);
  const std::vector<int> labels = {0, 1, 1, 1, 1};
  const PkSampler s(labels, {2, 4});
  Rng a(5), b(5);
  for (int t = 0; t < 10; ++t) {
    const auto x = s.next_batch(a);
    CHECK(x == s.next_batch(b));
    CHECK(std::count(x.begin(), x.end(), std::size_t{0}) == 4);
  }
  const std::vector<int> few = {0, 0, 1, 1};
  CHECK_THROWS_AS(PkSampler(few, {3, 2}), DataError);
  CHECK_THROWS_AS(PkSampler(few, {2, 1}), ConfigError);
}

TEST_CASE("learning-rate schedule") {
  const LrSchedule desk;
  CHECK(lr_at(0, desk) == doctest::Approx(0.01 * 1e-3).epsilon(1e-15));
  CHECK(lr_at(4, desk) == 1e-3);
  CHECK(lr_at(14, desk) == 1e-3);
  CHECK(lr_at(15, desk) == 1e-4);
  CHECK(lr_at(23, desk) == 1e-5);
  CHECK_THROWS_AS(lr_at(30, desk), ContractError);

  LrSchedule full_run;
  full_run.warmup_epochs = 50;
  full_run.decay = {{200, 1e-4}, {300, 1e-5}};
  full_run.total_epochs = 400;
  CHECK(lr_at(250, full_run) == 1e-4);
  CHECK(lr_at(350, full_run) == 1e-5);
  CHECK(lr_at(50, full_run) == 1e-3);
  // Linear ramp: consecutive warm-up steps differ by a constant.
  const double step = lr_at(1, full_run) - lr_at(0, full_run);
  for (std::size_t e = 1; e < 50; ++e) CHECK(lr_at(e, full_run) - lr_at(e - 1, full_run) == doctest::Approx(step));
  // The ramp's next step lands exactly on base_lr at the boundary.
  CHECK(lr_at(49, full_run) + step == doctest::Approx(lr_at(50, full_run)));
  for (std::size_t e = 0; e < 400; ++e) CHECK(lr_at(e, full_run) > 0.0);
}

TEST_CASE("Adam matches a scalar reference trace") {
  Tensor p = Tensor::scalar(0.5);
  Tensor* params[] = {&p};
  const std::string names[] = {"x"};
  AdamState st;
  oracle::ScalarAdam ref;
  double x = 0.5;
  const double grads[] = {0.3, 0.3, -1.2, 0.05, 2.0};
  for (double g : grads) {
    const Tensor gt = Tensor::scalar(g);
    adam_step(params, std::span<const Tensor>(&gt, 1), names, st, 1e-2);
    x = ref.step(x, g, 1e-2);
    CHECK(std::abs(p.item() - x) < 1e-15);
  }
  CHECK(st.step == 5);
}

TEST_CASE("Adam: zero gradient leaves parameters, moments decay; NaN names the parameter") {
  Tensor p = Tensor::row({1.0, -2.0});
  Tensor* params[] = {&p};
  const std::string names[] = {"branch.w9"};
  AdamState st;
  const Tensor g1 = Tensor::row({1.0, 1.0});
  adam_step(params, std::span<const Tensor>(&g1, 1), names, st, 0.1);
  const Tensor after = p;
  const Tensor m1 = st.m[0];
  const Tensor g0 = Tensor::row({0.0, 0.0});
  adam_step(params, std::span<const Tensor>(&g0, 1), names, st, 0.0);
  CHECK(p == after);
  CHECK(st.m[0][0] == doctest::Approx(0.9 * m1[0]));
  Tensor bad = Tensor::row({0.0, 0.0});
  bad[1] = std::nan("");
  try {
    adam_step(params, std::span<const Tensor>(&bad, 1), names, st, 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("branch.w9") != std::string::npos);
  }
  CHECK(p == after);
  CHECK(st.step == 2);
}

namespace {

TrainConfig desk_config(std::uint64_t seed, std::size_t epochs) {
  RunConfig rc;
  rc.seed = seed;
  rc.schedule.total_epochs = epochs;
  if (epochs < 30) rc.schedule.decay.clear();
  return rc.train_config();
}

Dataset desk_data(std::uint64_t seed) {
  RunConfig rc;
  rc.data.seed = seed;
  return generate_dataset(rc.data_spec());
}

}  // namespace

TEST_CASE("zero epochs yields the initialization") {
  const Dataset d = desk_data(1);
  TrainConfig cfg = desk_config(3, 0);
  const TrainResult r = train(cfg, d.train);
  CHECK(r.metrics.empty());
  ModelConfig mc = cfg.model;
  mc.num_classes = 20;
  Rng rng(3);
  const Model init = Model::init(mc, rng);
  CHECK(model_to_entries(r.model).size() == model_to_entries(init).size());
  const auto a = model_to_entries(r.model), b = model_to_entries(init);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].tensor == b[i].tensor);
}

TEST_CASE("training is reproducible and Adam steps are bitwise identical") {
  const Dataset d = desk_data(2);
  const TrainConfig cfg = desk_config(4, 2);
  const TrainResult a = train(cfg, d.train);
  const TrainResult b = train(cfg, d.train);
  REQUIRE(a.metrics.size() == 14);
  for (std::size_t i = 0; i < a.metrics.size(); ++i) CHECK(metrics_row(a.metrics[i]) == metrics_row(b.metrics[i]));
  CHECK(encode_container(model_to_entries(a.model)) == encode_container(model_to_entries(b.model)));
}

TEST_CASE("metrics CSV layout") {
  const Dataset d = desk_data(2);
  const TrainResult r = train(desk_config(4, 1), d.train);
  const auto dir = testutil::temp_dir("metrics");
  write_metrics_csv(dir / "m.csv", r.metrics);
  std::ifstream f(dir / "m.csv");
  std::string header, row;
  std::getline(f, header);
  CHECK(header == "step,epoch,lr,ce_q,ce_p,ce_z,triplet_p,triplet_z,fdrt,ihtl,acm,total");
  std::size_t rows = 0;
  while (std::getline(f, row)) {
    ++rows;
    CHECK(std::count(row.begin(), row.end(), ',') == 11);
  }
  CHECK(rows == r.metrics.size());
}

TEST_CASE("desk training lowers the loss; early windows do not increase") {
  int monotone = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset d = desk_data(seed);
    const TrainResult r = train(desk_config(seed, 30), d.train);
    REQUIRE_FALSE(r.numeric_failure);
    REQUIRE(r.metrics.size() == 210);
    CHECK(r.metrics.back().total < r.metrics.front().total);
    double w[3] = {0, 0, 0};
    for (int k = 0; k < 3; ++k)
      for (int s = 0; s < 10; ++s) w[k] += r.metrics[static_cast<std::size_t>(10 * k + s)].total / 10.0;
    if (w[1] <= w[0] && w[2] <= w[1]) ++monotone;
  }
  CHECK(monotone >= 4);
}

TEST_CASE("a non-finite loss stops training and keeps the last good model") {
  Dataset d = desk_data(3);
  // Squared distances to these samples overflow to infinity.
  for (auto& s : d.train.samples)
    if (s.id == 5)
      for (double& v : s.input.values()) v = 1e160;
  const TrainResult r = train(desk_config(1, 3), d.train);
  REQUIRE(r.numeric_failure);
  CHECK(r.numeric_failure->find("step") != std::string::npos);
  bool finite = true;
  Model m = r.model;
  m.for_each_parameter([&](const std::string&, Tensor& t) { finite = finite && t.all_finite(); });
  CHECK(finite);
  CHECK(r.metrics.size() < 21);
}

TEST_CASE("class indices are contiguous in id order") {
  Split s;
  for (int id : {12, 4, 12, 9}) {
    LabeledSample x;
    x.id = id;
    s.samples.push_back(x);
  }
  std::size_t n = 0;
  CHECK(class_indices(s, &n) == std::vector<int>{2, 0, 2, 1});
  CHECK(n == 3);
}
