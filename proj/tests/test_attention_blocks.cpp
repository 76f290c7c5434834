#include "block_cases.hpp"

#include "doctest_torch.hpp"

using namespace wxr;
using namespace wxr::testing;

namespace {

constexpr double kGradTol = 1e-4;

void zero_all(torch::nn::Module& m) {
  torch::NoGradGuard no_grad;
  for (auto& p : m.parameters()) p.zero_();
}

// Identity 3x3 kernel: centre tap 1 on the channel diagonal.
void set_identity(torch::nn::Conv2d& conv) {
  torch::NoGradGuard no_grad;
  conv->weight.zero_();
  for (int64_t c = 0; c < conv->weight.size(0); ++c) conv->weight[c][c][1][1] = 1.0;
  conv->bias.zero_();
}

}  // namespace

TEST_SUITE("attention_blocks") {
  TEST_CASE("channel attention with zero weights halves the input") {
    ChannelAttention ca(16);
    zero_all(*ca);
    auto x = torch::randn({1, 16, 7, 5});
    CHECK(torch::allclose(ca->forward(x), 0.5 * x, 0, 0));
  }

  TEST_CASE("channel attention pools a constant map to that constant") {
    torch::manual_seed(1);
    ChannelAttention ca(16);
    init_normal(*ca, 0.5);
    ca->to(torch::kFloat64);
    auto c = torch::randn({1, 16, 1, 1}, torch::kFloat64);
    auto big = c.expand({1, 16, 9, 11}).contiguous();
    CHECK(torch::allclose(ca->attention(big), ca->attention(c), 1e-12, 0));
  }

  TEST_CASE("channel attention scales lie in (0, 1) and shape is preserved") {
    torch::manual_seed(2);
    ChannelAttention ca(16);
    init_normal(*ca, 1.0);
    auto x = torch::randn({1, 16, 6, 6}) * 3;
    auto a = ca->attention(x);
    CHECK(a.sizes() == torch::IntArrayRef{1, 16, 1, 1});
    CHECK((a > 0).all().item<bool>());
    CHECK((a < 1).all().item<bool>());
    CHECK(ca->forward(x).sizes() == x.sizes());
  }

  TEST_CASE("non-finite input is rejected") {
    ChannelAttention ca(8);
    PixelAttention pa(8);
    auto x = torch::zeros({1, 8, 4, 4});
    x[0][3][1][1] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(ca->forward(x), std::invalid_argument);
    CHECK_THROWS_AS(pa->forward(x), std::invalid_argument);
  }

  TEST_CASE("pixel attention with zero weights halves the input; output bounded by input") {
    PixelAttention pa(16);
    zero_all(*pa);
    auto x = torch::randn({1, 16, 6, 6});
    CHECK(torch::allclose(pa->forward(x), 0.5 * x, 0, 0));
    torch::manual_seed(3);
    init_normal(*pa, 0.5);
    pa->to(torch::kFloat64);
    x = x.to(torch::kFloat64);
    auto y = pa->forward(x);
    CHECK((y.abs() <= x.abs()).all().item<bool>());
    auto m = pa->attention(x);
    CHECK(m.size(1) == 1);
    CHECK((m > 0).all().item<bool>());
    CHECK((m < 1).all().item<bool>());
  }

  TEST_CASE("FA block with identity convs and zero attention matches the composition oracle") {
    FABlock fa(8);
    zero_all(*fa);
    set_identity(fa->conv1);
    set_identity(fa->conv2);
    auto x = torch::randn({1, 8, 6, 6});
    // conv2(relu(conv1 x)) + x = relu(x) + x; CA and PA each scale by 0.5.
    auto expected = 0.25 * (torch::relu(x) + x) + x;
    CHECK(torch::allclose(fa->forward(x), expected, 1e-6, 1e-6));
  }

  TEST_CASE("FA block maps zero to zero with zero biases and rejects channel mismatch") {
    torch::manual_seed(4);
    FABlock fa(8);
    init_normal(*fa, 0.3);
    {
      torch::NoGradGuard no_grad;
      for (auto& item : fa->named_parameters()) {
        if (item.key().find("bias") != std::string::npos) item.value().zero_();
      }
    }
    auto z = torch::zeros({1, 8, 5, 5});
    CHECK(fa->forward(z).abs().max().item<double>() == 0.0);
    CHECK_THROWS_AS(fa->forward(torch::zeros({1, 6, 5, 5})), std::invalid_argument);
  }

  TEST_CASE("deformable conv with zero offsets and unit modulation equals convolution") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 20; ++i) CHECK(dcn_zero_offset_case(rng) < 1e-5);
  }

  TEST_CASE("deformable conv on zero input returns the bias") {
    const int64_t k = 3;
    auto bias = torch::tensor({0.5, -1.5});
    auto y = deform_conv2d(torch::zeros({1, 3, 4, 5}), torch::randn({1, 2 * k * k, 4, 5}),
                           torch::rand({1, k * k, 4, 5}), torch::randn({2, 3, k, k}), bias);
    CHECK(torch::equal(y, bias.view({1, 2, 1, 1}).expand({1, 2, 4, 5})));
  }

  TEST_CASE("bilinear sampling is exact on a ramp") {
    const int64_t h = 6, w = 8;
    auto ramp = torch::arange(w, torch::kFloat64).view({1, 1, 1, w}).expand({1, 1, h, w}).contiguous();
    auto off = torch::zeros({1, 2, h, w}, torch::kFloat64);
    off.select(1, 1).fill_(0.5);  // (dy, dx) = (0, +0.5)
    auto y = deform_conv2d(ramp, off, torch::ones({1, 1, h, w}, torch::kFloat64),
                           torch::ones({1, 1, 1, 1}, torch::kFloat64), torch::zeros({1}, torch::kFloat64));
    auto interior = y.narrow(3, 0, w - 1);
    auto expected = ramp.narrow(3, 0, w - 1) + 0.5;
    CHECK((interior - expected).abs().max().item<double>() < 1e-12);
  }

  TEST_CASE("deformable conv rejects even kernels and non-finite offsets") {
    CHECK_THROWS_AS(DeformableConv2d(3, 3, 2), std::invalid_argument);
    CHECK_THROWS_AS(deform_conv2d(torch::zeros({1, 1, 4, 4}), torch::zeros({1, 8, 4, 4}), torch::ones({1, 4, 4, 4}),
                                  torch::ones({1, 1, 2, 2}), torch::zeros({1})),
                    std::invalid_argument);
    auto off = torch::zeros({1, 18, 4, 4});
    off[0][5][2][2] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(deform_conv2d(torch::zeros({1, 1, 4, 4}), off, torch::ones({1, 9, 4, 4}),
                                  torch::ones({1, 1, 3, 3}), torch::zeros({1})),
                    std::invalid_argument);
  }

  TEST_CASE("deformable layer heads have 2k^2 and k^2 channels and start at zero") {
    DeformableConv2d d(4, 5, 3);
    init_normal(*d);
    CHECK(d->offset->weight.size(0) == 18);
    CHECK(d->mask->weight.size(0) == 9);
    auto x = torch::randn({1, 4, 6, 6});
    CHECK(d->offsets(x).abs().max().item<double>() == 0.0);
    auto m = d->modulation(x);
    CHECK((m > 0).all().item<bool>());
    CHECK((m < 1).all().item<bool>());
    CHECK(d->forward(x).sizes() == torch::IntArrayRef{1, 5, 6, 6});
  }

  TEST_CASE("DFE in forced-standard mode equals two chained convolutions") {
    torch::manual_seed(5);
    DFEModule dfe(4, 3);
    init_normal(*dfe, 0.3);
    {
      torch::NoGradGuard no_grad;
      for (auto* d : {&dfe->dcn1, &dfe->dcn2}) {
        (*d)->offset->weight.zero_();
        (*d)->offset->bias.zero_();
        (*d)->mask->weight.zero_();
        (*d)->mask->bias.fill_(40.0);  // sigmoid(40) == 1 in float32
      }
    }
    auto x = torch::randn({1, 4, 7, 6});
    auto ref = torch::conv2d(torch::relu(torch::conv2d(x, dfe->dcn1->weight, dfe->dcn1->bias, 1, 1)),
                             dfe->dcn2->weight, dfe->dcn2->bias, 1, 1);
    CHECK((dfe->forward(x) - ref).abs().max().item<double>() < 1e-5);
  }

  TEST_CASE("DFE maps zero to zero with zero biases") {
    torch::manual_seed(6);
    DFEModule dfe(4, 3);
    init_normal(*dfe, 0.3);
    {
      torch::NoGradGuard no_grad;
      dfe->dcn1->bias.zero_();
      dfe->dcn2->bias.zero_();
    }
    CHECK(dfe->forward(torch::zeros({1, 4, 5, 5})).abs().max().item<double>() == 0.0);
  }

  TEST_CASE("SK fusion with equal logits averages the branches") {
    SKFusion sk(16);
    torch::manual_seed(7);
    init_normal(*sk, 0.5);
    {
      torch::NoGradGuard no_grad;
      sk->mlp2->weight.zero_();
      sk->mlp2->bias.zero_();
    }
    auto a = torch::randn({1, 16, 4, 4}), b = torch::randn({1, 16, 4, 4});
    CHECK(torch::allclose(sk->forward(a, b), (a + b) / 2, 1e-6, 1e-7));
  }

  TEST_CASE("SK fusion saturates to the first branch") {
    SKFusion sk(16);
    {
      torch::NoGradGuard no_grad;
      sk->to(torch::kFloat64);
      sk->mlp2->weight.zero_();
      sk->mlp2->bias.narrow(0, 0, 16).fill_(20.0);
      sk->mlp2->bias.narrow(0, 16, 16).fill_(-20.0);
    }
    auto a = torch::randn({1, 16, 4, 4}, torch::kFloat64), b = torch::randn({1, 16, 4, 4}, torch::kFloat64);
    CHECK((sk->forward(a, b) - a).abs().max().item<double>() < 1e-8);
  }

  TEST_CASE("SK fusion is a convex combination with weights summing to one") {
    torch::manual_seed(8);
    SKFusion sk(8);
    sk->to(torch::kFloat64);
    int violations = 0;
    for (int i = 0; i < 1000; ++i) {
      init_normal(*sk, 0.5);
      auto a = torch::randn({1, 8, 3, 3}, torch::kFloat64) * 4, b = torch::randn({1, 8, 3, 3}, torch::kFloat64) * 4;
      auto w = sk->weights(a, b);
      auto y = sk->forward(a, b);
      const bool ok = (w > 0).all().item<bool>() && (w < 1).all().item<bool>() &&
                      ((w.sum(1) - 1).abs() < 1e-6).all().item<bool>() &&
                      (y.abs() <= torch::max(a.abs(), b.abs()) + 1e-12).all().item<bool>();
      violations += ok ? 0 : 1;
    }
    CHECK(violations == 0);
    CHECK_THROWS_AS(sk->forward(torch::zeros({1, 8, 3, 3}), torch::zeros({1, 8, 3, 4})), std::invalid_argument);
  }

  TEST_CASE("bottleneck widths follow ceil(C/r) with a floor") {
    CHECK(bottleneck_width(64, 8) == 8);
    CHECK(bottleneck_width(12, 8) == 2);
    CHECK(bottleneck_width(12, 8, 4) == 4);
  }

  TEST_CASE("autodiff matches finite differences for every block") {
    std::mt19937_64 rng(2024);
    for (int draw = 0; draw < 3; ++draw) {
      CHECK(gc_channel_attention(rng).rel_error < kGradTol);
      CHECK(gc_pixel_attention(rng).rel_error < kGradTol);
      CHECK(gc_fa_block(rng).rel_error < kGradTol);
      CHECK(gc_deform_conv(rng).rel_error < kGradTol);
      CHECK(gc_dfe_module(rng).rel_error < kGradTol);
      CHECK(gc_sk_fusion(rng).rel_error < kGradTol);
    }
  }
}
