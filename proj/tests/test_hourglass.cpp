#include <doctest.h>

#include "defstereo/model.hpp"
#include "gradient_suite.hpp"

using namespace defstereo;
using namespace testing;

namespace {

ModelInputs<float> random_inputs(int n, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  auto make = [&] {
    Tensor t({n, 3, h, w});
    for (auto& v : t.data()) v = u(rng);
    return t;
  };
  return {make(), make(), make()};
}

// Written out from named parameters only, without the Residual type.
Tensor64 manual_residual(Graph64& g, const ParamStore<double>& p, const std::string& name,
                         const Tensor64& x) {
  auto act = [&](const std::string& bn, const Tensor64& v) {
    auto state = BnState<double>::fresh(v.dim(1));
    auto y = batchnorm(g, v, p.get(bn + ".gamma"), p.get(bn + ".beta"), state, ForwardMode::Train);
    return prelu(g, y, p.get(bn + ".slope"));
  };
  auto y = conv2d(g, act(name + ".bn1", x), p.get(name + ".conv1.weight"), Tensor64(), 1, 0);
  y = conv2d(g, act(name + ".bn2", y), p.get(name + ".conv2.weight"), Tensor64(), 1, 1);
  y = conv2d(g, act(name + ".bn3", y), p.get(name + ".conv3.weight"), p.get(name + ".conv3.bias"),
             1, 0);
  return add(g, y, x);
}

}  // namespace

TEST_CASE("presets and config validation") {
  CHECK(HGConfig::paper().base_channels == 256);
  CHECK(HGConfig::paper().siamese_c1 == 64);
  CHECK(HGConfig::paper().siamese_c2 == 128);
  CHECK(HGConfig::paper().num_stacks == 2);
  CHECK(HGConfig::desk().divisor() == 16);
  HGConfig bad = HGConfig::desk();
  bad.num_stacks = 0;
  CHECK_THROWS(bad.validate());
  CHECK_THROWS_AS(HGConfig::desk().check_input(40, 64), ShapeError);
}

TEST_CASE("siamese front") {
  ParamStore<float> store;
  HourglassNet<float> net(store, "dfd", HGConfig::desk(), InputBinding::Defocus, 3);
  Graph g(Graph::Mode::NoGrad);
  auto in = random_inputs(2, 64, 128, 1);

  SUBCASE("shared weights give identical branches") {
    auto s = net.siamese_forward(g, in.left, in.left, ForwardMode::Train);
    CHECK(bit_equal(s.branch_a, s.branch_b));
    CHECK(net.siamese().conv1.weight.same_storage(store.get("dfd.siamese.conv1.weight")));
  }
  SUBCASE("stride arithmetic") {
    auto s = net.siamese_forward(g, in.left, in.right, ForwardMode::Train);
    CHECK(s.features.dims() == Dims{2, 32, 16, 32});
    CHECK(s.half_skip.dims() == Dims{2, 16, 32, 64});
    CHECK(s.full_skip.dims() == Dims{2, 3, 64, 128});
  }
  SUBCASE("swapping inputs permutes the concatenated blocks") {
    auto ab = net.siamese_forward(g, in.left, in.right, ForwardMode::Train).concatenated;
    auto ba = net.siamese_forward(g, in.right, in.left, ForwardMode::Train).concatenated;
    const int c2 = 24;
    bool ok = true;
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 2 * c2; ++c)
        for (int y = 0; y < 16; ++y)
          for (int x = 0; x < 32; ++x)
            ok = ok && ab.at(n, c, y, x) == ba.at(n, (c + c2) % (2 * c2), y, x);
    CHECK(ok);
  }
  SUBCASE("gradient from either branch lands in the one weight") {
    store.zero_grad();
    Graph rec;
    auto s = net.siamese_forward(rec, in.left, in.right, ForwardMode::Train);
    rec.backward(sum(rec, s.branch_b));
    double mag = 0;
    for (float v : store.get("dfd.siamese.conv1.weight").grad()) mag += std::abs(v);
    CHECK(mag > 0);
  }
  SUBCASE("indivisible input") {
    auto odd = random_inputs(1, 40, 64, 2);
    CHECK_THROWS_AS(net.siamese_forward(g, odd.left, odd.right, ForwardMode::Train), ShapeError);
  }
}

TEST_CASE("hourglass keeps dims for depths 1..4") {
  for (int depth = 1; depth <= 4; ++depth) {
    HGConfig cfg = HGConfig::micro();
    cfg.hg_depth = depth;
    ParamStore<float> store;
    HourglassNet<float> net(store, "dfd", cfg, InputBinding::Defocus, 1);
    Tensor x = Tensor::full({2, 4, 16, 32}, 0.5f);
    x.data()[7] = 1.f;
    Graph g(Graph::Mode::NoGrad);
    CHECK(net.hourglass_forward(g, 0, x, ForwardMode::Train).dims() == x.dims());
  }
  ParamStore<float> store;
  HGConfig cfg = HGConfig::micro();
  cfg.hg_depth = 3;
  HourglassNet<float> net(store, "dfd", cfg, InputBinding::Defocus, 1);
  Graph g(Graph::Mode::NoGrad);
  CHECK_THROWS_AS(net.hourglass_forward(g, 0, Tensor({1, 4, 12, 16}), ForwardMode::Train),
                  ShapeError);
}

TEST_CASE("depth-1 hourglass equals manual assembly of its five residual modules") {
  ParamStore<double> store;
  HourglassNet<double> net(store, "dfd", HGConfig::micro(), InputBinding::Defocus, 17);
  std::size_t residuals = 0;
  for (const auto& [name, e] : store.params())
    if (name.starts_with("dfd.stack0.hg.") && name.ends_with(".conv3.weight")) ++residuals;
  CHECK(residuals == 5);

  Rng rng(4);
  auto x = random_tensor({2, 4, 8, 8}, rng);
  Graph64 g(Graph64::Mode::NoGrad);
  auto got = net.hourglass_forward(g, 0, x, ForwardMode::Train);

  const std::string p = "dfd.stack0.hg.";
  auto skip = manual_residual(g, store, p + "l0.skip", x);
  auto inner = manual_residual(g, store, p + "l0.down", maxpool2(g, x));
  inner = manual_residual(g, store, p + "bottom", inner);
  inner = manual_residual(g, store, p + "l0.after", inner);
  auto expect = manual_residual(g, store, p + "l0.post", add(g, upsample_nn2(g, inner), skip));
  CHECK(max_abs_diff(got, expect) <= 1e-12);
}

TEST_CASE("stacks") {
  ParamStore<float> store;
  HourglassNet<float> net(store, "stereo", HGConfig::desk(), InputBinding::Stereo, 5);
  auto in = random_inputs(2, 32, 64, 3);
  Graph g(Graph::Mode::NoGrad);
  auto out = net.forward(g, in, ForwardMode::Train);
  CHECK(out.intermediate.size() == 2);
  for (const auto& p : out.intermediate) CHECK(p.dims() == Dims{2, 1, 8, 16});
  CHECK(out.final_disparity.dims() == Dims{2, 1, 32, 64});

  SUBCASE("zeroed post and remap make the next stack input equal this one") {
    for (const char* name : {"stereo.stack0.post", "stereo.stack0.remap"}) {
      for (auto& v : store.get(std::string(name) + ".weight").data()) v = 0.f;
      for (auto& v : store.get(std::string(name) + ".bias").data()) v = 0.f;
    }
    Rng rng(2);
    std::normal_distribution<float> nd;
    Tensor x({2, 32, 8, 16});
    for (auto& v : x.data()) v = nd(rng);
    auto step = net.stack_step(g, 0, x, ForwardMode::Train);
    CHECK(max_abs_diff(step.next, x) == 0.0);
  }
  SUBCASE("intermediate prediction responds to input perturbation") {
    auto moved = in;
    moved.right = in.right.clone();
    for (int y = 8; y < 16; ++y)
      for (int c = 0; c < 3; ++c) moved.right.at(0, c, y, 20) += 0.5f;
    auto out2 = net.forward(g, moved, ForwardMode::Train);
    CHECK(max_abs_diff(out.intermediate[0], out2.intermediate[0]) > 0.0);
  }
}

TEST_CASE("deconv head") {
  ParamStore<float> store;
  HourglassNet<float> net(store, "dfd", HGConfig::desk(), InputBinding::Defocus, 8);
  auto in = random_inputs(1, 64, 128, 9);
  Graph g(Graph::Mode::NoGrad);
  auto s = net.siamese_forward(g, in.left, in.left_defocus, ForwardMode::Train);
  auto disp = net.head_forward(g, s.features, s, ForwardMode::Train);
  CHECK(disp.dims() == Dims{1, 1, 64, 128});

  auto zeroed = s;
  zeroed.half_skip = Tensor(s.half_skip.dims());
  zeroed.full_skip = Tensor(s.full_skip.dims());
  auto disp0 = net.head_forward(g, s.features, zeroed, ForwardMode::Train);
  CHECK(disp0.dims() == disp.dims());
  CHECK(max_abs_diff(disp0, disp) > 0.0);

  auto wrong = s;
  wrong.half_skip = Tensor({1, 16, 16, 32});
  CHECK_THROWS_AS(net.head_forward(g, s.features, wrong, ForwardMode::Train), ShapeError);

  auto full = net.forward(g, in, ForwardMode::Train);
  for (float v : full.final_disparity.data()) REQUIRE(std::isfinite(v));
}

TEST_CASE("shape closure over valid inputs") {
  auto model = build_dfd_net(HGConfig::desk(), 2);
  for (auto [h, w] : {std::pair{16, 16}, {32, 48}, {48, 32}, {96, 128}}) {
    Graph g(Graph::Mode::NoGrad);
    auto out = model->forward(g, random_inputs(1, h, w, 4), ForwardMode::Eval);
    CHECK(out.final_disparity.dims() == Dims{1, 1, h, w});
    for (const auto& p : out.intermediate) CHECK(p.dims() == Dims{1, 1, h / 4, w / 4});
  }
}

TEST_CASE("model builders and parameter counts") {
  auto dfd = build_dfd_net(HGConfig::desk(), 1);
  auto stereo = build_stereo_net(HGConfig::desk(), 1);
  CHECK(count_parameters(*dfd) == count_parameters(*stereo));
  // siamese: 16*3*49 + 48 + 24*16*25 + 72 + 32*48 + 32            = 13640
  // residual 32->32: 96 + 16*32 + 48 + 16*16*9 + 48 + 32*16 + 32  = 3552
  // stack: 9 residuals + predict 33 + post 1056 + remap 64        = 33121
  // head: up1 16416 + fuse1(48->32) 5424 + up2 8208 + fuse2(19->16) 1297 + out 17 = 31362
  CHECK(count_parameters(*dfd) == 13640 + 2 * 33121 + 31362);
  auto parts = parameter_breakdown(*dfd);
  CHECK(parts.at("dfd.siamese") == 13640);
  CHECK(parts.at("dfd.stack0") == 33121);
  CHECK(parts.at("dfd.head") == 31362);

  auto paper = build_dfd_net(HGConfig::paper(), 1);
  CHECK(paper->params().get("dfd.siamese.conv1.weight").dims() == Dims{64, 3, 7, 7});
  CHECK(paper->params().get("dfd.siamese.conv2.weight").dims() == Dims{128, 64, 5, 5});
  CHECK(paper->params().get("dfd.head.up1.weight").dims() == Dims{256, 256, 4, 4});
  CHECK(paper->params().get("dfd.head.up2.weight").dims() == Dims{256, 128, 4, 4});

  SUBCASE("input binding") {
    auto in = random_inputs(1, 16, 16, 5);
    auto& dnet = dynamic_cast<HourglassModel<float>&>(*dfd).net();
    auto& snet = dynamic_cast<HourglassModel<float>&>(*stereo).net();
    CHECK(dnet.bind(in).first.same_storage(in.left));
    CHECK(dnet.bind(in).second.same_storage(in.left_defocus));
    CHECK(snet.bind(in).first.same_storage(in.left));
    CHECK(snet.bind(in).second.same_storage(in.right));
  }
}

TEST_CASE("every parameter receives gradient") {
  auto model = build_stereo_net(HGConfig::desk(), 12);
  auto in = random_inputs(2, 32, 32, 6);
  Graph g;
  auto out = model->forward(g, in, ForwardMode::Train);
  Rng rng(1);
  std::normal_distribution<float> nd;
  auto project = [&](const Tensor& t) {
    Tensor w(t.dims());
    for (auto& v : w.data()) v = nd(rng);
    return dot(g, t, w);
  };
  auto loss = project(out.final_disparity);
  for (const auto& p : out.intermediate) loss = add(g, loss, project(p));
  g.backward(loss);
  for (const auto& [name, e] : model->params().params()) {
    bool any = false;
    for (float v : e.tensor.grad()) any = any || v != 0.f;
    CAPTURE(name);
    CHECK(any);
  }
}

TEST_CASE("micro preset end-to-end gradient check") {
  ModelConfig cfg{ModelKind::Dfd, HGConfig::micro()};
  auto r = model_gradcheck(cfg, 16, 32, 20, 31);
  CHECK(r.sampled == 20);
  CHECK(r.norm_error <= 1e-3);
  CHECK(r.worst_scalar <= 1e-3);
}

TEST_CASE("eval mode matches train mode once running stats settle") {
  for (ModelKind kind : {ModelKind::Dfd, ModelKind::Stereo, ModelKind::Fusion}) {
    CAPTURE(to_string(kind));
    auto model = build_model<float>(ModelConfig{kind, HGConfig::micro()}, 11);
    auto in = random_inputs(2, 32, 32, 5);
    // sharp and blurred views with different statistics, as in the DfD pair
    for (auto& v : in.left_defocus.data()) v = 0.5f + 0.1f * (v - 0.5f);
    Tensor train_out;
    for (int it = 0; it < 300; ++it) {
      Graph g(Graph::Mode::NoGrad);
      train_out = model->forward(g, in, ForwardMode::Train).final_disparity;
    }
    Graph g(Graph::Mode::NoGrad);
    Tensor eval_out = model->forward(g, in, ForwardMode::Eval).final_disparity;
    double diff = 0, mag = 0;
    for (std::size_t i = 0; i < train_out.numel(); ++i) {
      diff += std::abs(train_out.data()[i] - eval_out.data()[i]);
      mag += std::abs(train_out.data()[i]);
    }
    CHECK(diff < 0.02 * mag);
  }
}
