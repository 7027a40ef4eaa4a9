#include "vtp/gradcheck.hpp"

#include <cmath>

#include "vtp/model.hpp"

namespace vtp {

GradCheckReport finite_difference_check(
    const std::function<Tensor()>& loss_fn,
    const std::vector<std::pair<std::string, Tensor>>& leaves, int n_probes,
    Rng& rng, double h) {
  for (const auto& [name, leaf] : leaves)
    if (!leaf.requires_grad())
      throw ContractError("finite_difference_check: leaf '" + name +
                          "' does not require grad");

  for (const auto& [name, leaf] : leaves) {
    Tensor t = leaf;
    t.zero_grad();
  }
  loss_fn().backward();
  std::vector<std::vector<double>> grads;
  grads.reserve(leaves.size());
  for (const auto& [name, leaf] : leaves) grads.push_back(leaf.grad());

  GradCheckReport report;
  for (int probe = 0; probe < n_probes; ++probe) {
    const std::size_t which = rng.uniform_int(leaves.size());
    Tensor leaf = leaves[which].second;
    const std::size_t idx = rng.uniform_int(leaf.size());
    const double original = leaf.values()[idx];

    double f_plus, f_minus;
    {
      NoGradScope no_grad;
      leaf.mutable_values()[idx] = original + h;
      f_plus = loss_fn().scalar();
      leaf.mutable_values()[idx] = original - h;
      f_minus = loss_fn().scalar();
      leaf.mutable_values()[idx] = original;
    }
    const double fd = (f_plus - f_minus) / (2.0 * h);
    const double ad = grads[which][idx];
    const double err =
        std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)});
    if (err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst = leaves[which].first + "/" + std::to_string(idx);
    }
  }
  return report;
}

namespace {

// Fixed-seed weighted reduction: identical weights on every call, so the
// objective seen by the finite-difference probes is a pure function of the
// leaf values.
Tensor probe_loss(const Tensor& t, std::uint64_t weight_seed) {
  Rng wr(weight_seed);
  std::vector<double> w(t.size());
  for (double& v : w) v = wr.uniform(-1.0, 1.0);
  return sum_all(mul(t, Tensor::from_values(t.shape(), std::move(w))));
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_fused = 1;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.frames = 2;
  cfg.patch_size = 4;
  cfg.image_size = 8;
  cfg.vocab_size = 56;
  cfg.max_text_len = 6;
  cfg.projector_dims = {8, 8, 8};
  cfg.ffn_mult = 2;
  return cfg;
}

}  // namespace

std::vector<SuiteEntry> run_gradcheck_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SuiteEntry> entries;
  auto run = [&](const std::string& name, double tol,
                 const std::function<Tensor()>& loss,
                 const std::vector<std::pair<std::string, Tensor>>& leaves,
                 int probes = 10) {
    SuiteEntry entry;
    entry.name = name;
    entry.tolerance = tol;
    entry.report = finite_difference_check(loss, leaves, probes, rng);
    entry.ok = entry.report.max_rel_err <= tol;
    entries.push_back(entry);
  };

  auto randn = [&rng](Shape shape, double s = 1.0) {
    return Tensor::randn(std::move(shape), rng, s, true);
  };

  {
    Tensor a = randn({3, 4}), b = randn({4, 2});
    run("matmul", 1e-6, [&] { return probe_loss(matmul(a, b), 101); },
        {{"a", a}, {"b", b}});
  }
  {
    Tensor a = randn({2, 3, 4}), b = randn({2, 4, 3});
    run("matmul_batched", 1e-6, [&] { return probe_loss(matmul(a, b), 102); },
        {{"a", a}, {"b", b}});
  }
  {
    Tensor x = randn({5});
    run("softmax", 1e-6, [&] { return probe_loss(softmax(x, 0), 103); },
        {{"x", x}});
  }
  {
    Tensor x = randn({4, 8}), g = randn({8}), b = randn({8});
    run("layer_norm", 1e-6,
        [&] { return probe_loss(layer_norm(x, g, b, 1e-6), 104); },
        {{"x", x}, {"gain", g}, {"bias", b}});
  }
  {
    Tensor x = randn({6});
    run("gelu", 1e-6, [&] { return probe_loss(gelu(x), 105); }, {{"x", x}});
  }
  {
    Tensor x = randn({6});
    run("sigmoid", 1e-6, [&] { return probe_loss(sigmoid(x), 106); },
        {{"x", x}});
  }
  {
    Tensor a = randn({3, 4}), b = randn({4});
    run("add_broadcast", 1e-6, [&] { return probe_loss(add(a, b), 107); },
        {{"a", a}, {"b", b}});
  }
  {
    Tensor a = randn({3, 4}), b = randn({3, 4});
    run("mul", 1e-6, [&] { return probe_loss(mul(a, b), 108); },
        {{"a", a}, {"b", b}});
  }
  {
    Tensor a = randn({3, 4}), s = randn({1});
    run("scale_by", 1e-6, [&] { return probe_loss(scale_by(a, s), 109); },
        {{"a", a}, {"s", s}});
  }
  {
    Tensor x = randn({2, 3, 4});
    run("mean_axis", 1e-6, [&] { return probe_loss(mean(x, 1), 110); },
        {{"x", x}});
  }
  {
    Tensor table = randn({7, 4});
    const std::vector<int> ids = {1, 3, 3, 6, 0};
    run("embedding_lookup", 1e-6,
        [&] { return probe_loss(embedding_lookup(table, ids), 111); },
        {{"table", table}});
  }
  {
    Tensor x = randn({2, 3, 4});
    run("permute_reshape", 1e-6,
        [&] { return probe_loss(reshape(permute(x, {2, 0, 1}), {4, 6}), 112); },
        {{"x", x}});
  }
  {
    Tensor a = randn({2, 4}), b = randn({3, 4});
    run("concat_slice_gather", 1e-6,
        [&] {
          Tensor cat = concat({a, b}, 0);
          Tensor sliced = slice_rows(cat, 1, 5);
          return probe_loss(gather_rows(sliced, {0, 2, 2, 3}), 113);
        },
        {{"a", a}, {"b", b}});
  }
  {
    Tensor x = randn({3, 5});
    run("l2_normalize", 1e-6, [&] { return probe_loss(l2_normalize(x), 114); },
        {{"x", x}});
  }
  {
    Tensor logits = randn({4, 6});
    const std::vector<int> targets = {2, 0, 5, 1};
    run("cross_entropy", 1e-6, [&] { return cross_entropy(logits, targets); },
        {{"logits", logits}});
  }
  {
    Tensor logits = randn({6});
    const std::vector<double> labels = {1, 0, 1, 1, 0, 0};
    run("bce_with_logits", 1e-6,
        [&] { return bce_with_logits(logits, labels); }, {{"logits", logits}});
  }
  {
    Tensor sim = randn({4, 4});
    std::vector<std::uint8_t> num(16, 0), den(16, 1);
    for (int i = 0; i < 4; ++i) num[static_cast<std::size_t>(i * 4 + i)] = 1;
    num[1] = 1;
    num[14] = 1;
    run("masked_lse_ratio_loss", 1e-6,
        [&] { return masked_lse_ratio_loss(sim, num, den); }, {{"sim", sim}});
  }
  {
    Tensor a = randn({3, 4}), b = randn({4, 5});
    run("composite_matmul_softmax_mean", 1e-5,
        [&] { return mean_all(softmax(matmul(a, b), 1)); },
        {{"a", a}, {"b", b}});
  }

  // Full fused encoder layer, including the gate parameters.
  {
    ModelConfig cfg = tiny_config();
    Model model(cfg, 99);
    model.set_alpha(0.3);
    Rng data_rng(seed ^ 0x5eed);
    Tensor frames = Tensor::randn(
        {cfg.frames, cfg.image_size, cfg.image_size, cfg.channels}, data_rng,
        0.5);
    std::vector<int> tokens(cfg.max_text_len, 4);
    tokens[0] = 2;
    tokens[cfg.max_text_len - 1] = 0;
    std::vector<std::uint8_t> mask(cfg.max_text_len, 1);
    mask[cfg.max_text_len - 1] = 0;

    std::vector<std::pair<std::string, Tensor>> leaves;
    std::vector<std::pair<std::string, Tensor>> alphas;
    for (Parameter& p : model.params().all())
      if (p.tensor.requires_grad()) {
        leaves.emplace_back(p.name, p.tensor);
        if (p.name.find(".alpha") != std::string::npos)
          alphas.emplace_back(p.name, p.tensor);
      }

    auto loss = [&] {
      TowerOutputs out = model.fused_forward(frames, tokens, mask);
      return add(probe_loss(out.video_tokens, 115),
                 probe_loss(out.text_tokens, 116));
    };
    run("fused_layer_full", 1e-4, loss, leaves);
    run("fused_layer_gate", 1e-4, loss, alphas,
        static_cast<int>(alphas.size() * 3));
  }

  return entries;
}

}  // namespace vtp
