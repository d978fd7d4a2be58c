#include "mhsa/verification.hpp"

#include <array>

#include "mhsa/backbone.hpp"
#include "mhsa/branch.hpp"
#include "mhsa/losses.hpp"
#include "mhsa/model.hpp"
#include "mhsa/random.hpp"

namespace mhsa {

namespace {

using ad::Tape;
using ad::Var;
using Inputs = std::span<const Var>;

// Random linear read-out so every output coordinate gets a distinct weight.
Var readout(Tape& tape, Var out, std::uint64_t salt) {
  Rng rng(salt + out.rows() * 131 + out.cols());
  return ad::sum(ad::mul(out, tape.constant(gaussian({out.rows(), out.cols()}, 1.0, rng))));
}

struct Suite {
  Rng rng;
  GradcheckOptions options;
  std::vector<GradcheckResult> results;

  Tensor g(std::size_t r, std::size_t c, double std = 1.0) { return gaussian({r, c}, std, rng); }

  void check(const std::string& name, const ScalarGraph& graph, std::vector<Tensor> inputs) {
    results.push_back(check_gradients(name, graph, std::move(inputs), options));
  }

  void unary(const std::string& name, Var (*op)(Var), Tensor x) {
    check(name, [op](Tape& t, Inputs v) { return readout(t, op(v[0]), 1); }, {std::move(x)});
  }

  void binary(const std::string& name, Var (*op)(Var, Var), Tensor a, Tensor b) {
    check(name, [op](Tape& t, Inputs v) { return readout(t, op(v[0], v[1]), 2); }, {std::move(a), std::move(b)});
  }
};

// Entries kept away from 0 so the ReLU kink is not straddled.
Tensor away_from_zero(Tensor t) {
  for (double& x : t.values()) x += x >= 0 ? 0.1 : -0.1;
  return t;
}

void op_checks(Suite& s) {
  s.binary("matmul", ad::matmul, s.g(3, 4), s.g(4, 2));
  s.binary("add", ad::add, s.g(3, 4), s.g(3, 4));
  s.binary("sub", ad::sub, s.g(3, 4), s.g(3, 4));
  s.binary("mul", ad::mul, s.g(3, 4), s.g(3, 4));
  s.binary("add_row", ad::add_row, s.g(3, 4), s.g(1, 4));
  s.binary("mul_row", ad::mul_row, s.g(3, 4), s.g(1, 4));
  s.check("scale", [](Tape& t, Inputs v) { return readout(t, ad::scale(v[0], -1.7), 3); }, {s.g(3, 4)});
  s.check("shift", [](Tape& t, Inputs v) { return readout(t, ad::shift(v[0], 0.3), 3); }, {s.g(3, 4)});
  s.check("sum", [](Tape&, Inputs v) { return ad::scale(ad::sum(v[0]), 1.3); }, {s.g(3, 4)});
  s.check("mean", [](Tape&, Inputs v) { return ad::scale(ad::mean(v[0]), 1.3); }, {s.g(3, 4)});
  s.unary("sum_rows", ad::sum_rows, s.g(3, 4));
  s.unary("sum_cols", ad::sum_cols, s.g(3, 4));
  s.unary("mean_rows", ad::mean_rows, s.g(3, 4));
  s.unary("transpose", ad::transpose, s.g(3, 4));
  s.check("reshape", [](Tape& t, Inputs v) { return readout(t, ad::reshape(v[0], 2, 6), 4); }, {s.g(3, 4)});
  s.check("repeat_row", [](Tape& t, Inputs v) { return readout(t, ad::repeat_row(v[0], 3), 4); }, {s.g(1, 4)});
  s.check("slice_rows", [](Tape& t, Inputs v) { return readout(t, ad::slice_rows(v[0], 1, 2), 4); }, {s.g(4, 3)});
  s.check("stack_rows",
          [](Tape& t, Inputs v) {
            const std::array<Var, 2> parts = {v[0], v[1]};
            return readout(t, ad::stack_rows(parts), 5);
          },
          {s.g(2, 3), s.g(1, 3)});
  s.check("concat_cols",
          [](Tape& t, Inputs v) {
            const std::array<Var, 2> parts = {v[0], v[1]};
            return readout(t, ad::concat_cols(parts), 5);
          },
          {s.g(2, 3), s.g(2, 2)});
  s.check("gather",
          [](Tape& t, Inputs v) {
            const std::array<std::size_t, 4> idx = {5, 0, 5, 11};
            return readout(t, ad::gather(v[0], idx), 6);
          },
          {s.g(3, 4)});
  s.unary("relu", ad::relu, away_from_zero(s.g(3, 4)));
  s.unary("square", ad::square, s.g(3, 4));
  s.check("min_const", [](Tape& t, Inputs v) { return readout(t, ad::min_const(v[0], 0.05), 7); },
          {away_from_zero(s.g(3, 4))});
  s.unary("softmax_rows", ad::softmax_rows, s.g(3, 4));
  s.unary("log_softmax_rows", ad::log_softmax_rows, s.g(3, 4));
  s.check("normalize_rows", [](Tape& t, Inputs v) { return readout(t, ad::normalize_rows(v[0], 1e-5), 8); },
          {s.g(3, 4)});
  s.check("layer_norm", [](Tape& t, Inputs v) { return readout(t, ad::layer_norm(v[0], v[1], v[2], 1e-5), 8); },
          {s.g(3, 4), s.g(1, 4), s.g(1, 4)});
  s.unary("l2_normalize_rows", ad::l2_normalize_rows, s.g(3, 4));
  s.binary("pairwise_sqdist", ad::pairwise_sqdist, s.g(3, 4), s.g(2, 4));
  s.check("frobenius_norm", [](Tape&, Inputs v) { return ad::frobenius_norm(v[0]); }, {s.g(3, 4)});
  s.check("im2col_3x3_s2", [](Tape& t, Inputs v) { return readout(t, ad::im2col_3x3_s2(v[0], 4, 6), 9); },
          {s.g(24, 2)});
}

ModelConfig tiny_model_config(Provider provider) {
  ModelConfig c;
  c.backbone.provider = provider;
  c.backbone.hf = 2;
  c.backbone.wf = 2;
  c.backbone.channels = 8;
  c.backbone.embed_dim = 4;
  c.backbone.image_channels = 2;
  c.backbone.encoder_width = 3;
  c.branch.heads = 2;
  c.num_classes = 3;
  return c;
}

std::vector<Tensor> parameter_values(Model& m) {
  std::vector<Tensor> out;
  m.for_each_parameter([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

void block_checks(Suite& s) {
  const std::size_t j = 6, c = 8, d = 4, k = 3;
  BranchConfig bc;
  bc.heads = k;
  Rng init_rng(s.rng());
  BranchParams bp = BranchParams::init(c, d, bc, init_rng);
  const Tensor q = s.g(j, c);

  s.check("attention_heads",
          [q](Tape& t, Inputs v) {
            BranchVars b;
            b.w1 = v[0];
            b.w2 = v[1];
            b.w3 = v[2];
            b.b3 = v[3];
            const Var qv = t.constant(q);
            return readout(t, head_embeddings(attention_weights(qv, b), qv, b), 10);
          },
          {bp.w1, bp.w2, bp.w3, s.g(1, d)});

  s.check("saffm",
          [](Tape& t, Inputs v) {
            BranchVars b;
            b.w4 = v[1];
            b.w5 = v[2];
            b.w6 = v[3];
            b.ln_p_gain = v[4];
            b.ln_p_bias = v[5];
            const FusionOutput out = saffm_fuse(v[0], b);
            return ad::add(readout(t, out.p_star, 11), readout(t, out.beta, 12));
          },
          {s.g(k, d), bp.w4, bp.w5, bp.w6, s.g(1, d), s.g(1, d)});

  s.check("residual_learn",
          [](Tape& t, Inputs v) {
            BranchVars b;
            b.ln_z_gain = v[2];
            b.ln_z_bias = v[3];
            const ResidualOutput out = residual_learn(v[0], v[1], b);
            return ad::add(readout(t, out.Z, 13), readout(t, out.z, 14));
          },
          {s.g(1, d), s.g(k, d), s.g(1, d), s.g(1, d)});

  BackboneConfig bb;
  bb.channels = c;
  bb.embed_dim = d;
  s.check("global_projection",
          [](Tape& t, Inputs v) {
            BackboneVars b;
            b.proj_w = v[1];
            b.bn_gain = v[2];
            b.bn_bias = v[3];
            return readout(t, project_global(v[0], b, Mode::train, 1e-5), 15);
          },
          {s.g(4, c), s.g(c, d), s.g(1, d, 0.5), s.g(1, d)});

  s.check("tiny_encoder",
          [](Tape& t, Inputs v) {
            BackboneVars b;
            b.conv1_w = v[1];
            b.conv1_b = v[2];
            b.conv2_w = v[3];
            b.conv2_b = v[4];
            return readout(t, tiny_encode(v[0], 8, 8, b), 16);
          },
          {s.g(64, 2), s.g(18, 3, 0.5), s.g(1, 3, 0.1), s.g(27, 4, 0.5), s.g(1, 4, 0.1)});
}

void loss_checks(Suite& s) {
  const std::vector<int> labels = {0, 0, 1, 1, 2, 2};
  s.check("ce_loss",
          [labels](Tape&, Inputs v) {
            return ce_loss(v[0], labels, {v[1], v[2]});
          },
          {s.g(6, 4), s.g(4, 3), s.g(1, 3)});
  s.check("hard_triplet", [labels](Tape&, Inputs v) { return hard_triplet(v[0], labels, 3.0); }, {s.g(6, 4)});
  s.check("ihtl",
          [labels](Tape&, Inputs v) { return ihtl(v, labels, 3.0); },
          {s.g(2, 4), s.g(2, 4), s.g(2, 4), s.g(2, 4), s.g(2, 4), s.g(2, 4)});
  s.check("fdrt", [](Tape&, Inputs v) { return fdrt(v[0]); }, {s.g(3, 4)});
  s.check("acm",
          [](Tape&, Inputs v) { return acm_term(ad::softmax_rows(v[0]), 0.3); },
          {s.g(5, 3)});
}

void end_to_end(Suite& s, const std::string& name, Provider provider, const LossWeights& w, bool train_gfb_ce) {
  ModelConfig cfg = tiny_model_config(provider);
  cfg.backbone.train_gfb_ce = train_gfb_ce;
  Rng init_rng(s.rng());
  Model model = Model::init(cfg, init_rng);
  std::vector<Tensor> inputs;
  for (int i = 0; i < 4; ++i) inputs.push_back(gaussian(cfg.input_shape(), 1.0, s.rng));
  const std::vector<int> labels = {0, 0, 2, 2};
  s.check(name,
          [model, inputs, labels, w, cfg](Tape& t, Inputs v) {
            const ModelVars vars = ModelVars::from_parameters(model, v);
            std::vector<const Tensor*> ptrs;
            for (const auto& x : inputs) ptrs.push_back(&x);
            const BatchForward fwd = forward_batch(t, vars, cfg, ptrs, Mode::train);
            return model_loss(cfg, collect_features(fwd, vars, labels), w).total;
          },
          parameter_values(model));
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed, const GradcheckOptions& options) {
  Suite s{Rng(seed), options, {}};
  op_checks(s);
  block_checks(s);
  loss_checks(s);
  end_to_end(s, "total_loss", Provider::synthetic, LossWeights{}, true);
  LossWeights heavy;
  heavy.lambda1 = 0.5;
  heavy.lambda3 = 0.5;
  heavy.gamma = 0.45;
  heavy.margin = 1.0;
  end_to_end(s, "total_loss_heavy_regularizers", Provider::synthetic, heavy, true);
  end_to_end(s, "total_loss_no_global_ce", Provider::synthetic, heavy, false);
  end_to_end(s, "total_loss_tiny_encoder", Provider::tiny_encoder, heavy, true);
  return s.results;
}

}  // namespace mhsa
