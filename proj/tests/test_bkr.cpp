#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pcdistill/bkr.hpp"
#include "pcdistill/errors.hpp"
#include "pcdistill/ot.hpp"
#include "pcdistill/rng.hpp"

using namespace pcdistill;
using namespace pcdistill::bkr;

namespace {

Mat random_mat(Index r, Index c, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Mat m(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
}

/// Three-level stack (16 -> 6 -> global) with an FPS-like position chain.
std::vector<LevelFeature> make_stack(const std::vector<int>& dims, std::uint64_t seed,
                                     bool params_required = true) {
    std::vector<LevelFeature> stack(3);
    Mat p0 = random_mat(16, 3, seed, 0.5);
    Mat p1 = p0.topRows(6);
    Mat p2 = p1.colwise().mean();
    stack[0] = {0, p0, {}, false};
    stack[1] = {1, p1, {}, false};
    stack[2] = {2, p2, {}, true};
    for (int l = 0; l < 3; ++l) {
        Mat f = random_mat(stack[static_cast<std::size_t>(l)].positions.rows(),
                           dims[static_cast<std::size_t>(l)], seed + 100 + static_cast<std::uint64_t>(l));
        stack[static_cast<std::size_t>(l)].features =
            params_required ? diff::DiffNode::param(f) : diff::DiffNode::constant(f);
    }
    return stack;
}

GateParams make_gate(Index d, std::uint64_t seed, double stddev) {
    GateParams g;
    g.fc.w = diff::DiffNode::param(random_mat(2 * d, 2, seed, stddev));
    g.fc.b = diff::DiffNode::param(Mat::Zero(1, 2));
    return g;
}

}  // namespace

TEST_CASE("gate_fuse neutral start is the even mixture") {
    Mat xv = random_mat(5, 4, 1);
    Mat yv = random_mat(5, 4, 2);
    diff::DiffNode x = diff::DiffNode::param(xv);
    diff::DiffNode y = diff::DiffNode::param(yv);
    GateParams g;
    g.fc.w = diff::DiffNode::param(Mat::Zero(8, 2));
    g.fc.b = diff::DiffNode::param(Mat::Zero(1, 2));
    diff::DiffNode out = gate_fuse(x, y, g);
    CHECK((out.value() - 0.5 * (xv + yv)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gate_fuse saturates toward the plain sum") {
    Mat xv = random_mat(4, 3, 3);
    Mat yv = random_mat(4, 3, 4);
    diff::DiffNode x = diff::DiffNode::param(xv);
    diff::DiffNode y = diff::DiffNode::param(yv);
    GateParams g;
    g.fc.w = diff::DiffNode::param(Mat::Zero(6, 2));
    g.fc.b = diff::DiffNode::param((Mat(1, 2) << 50.0, 50.0).finished());
    diff::DiffNode out = gate_fuse(x, y, g);
    CHECK((out.value() - (xv + yv)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("gate_fuse gates stay in the open unit interval") {
    diff::DiffNode x = diff::DiffNode::param(random_mat(6, 4, 5));
    diff::DiffNode y = diff::DiffNode::param(random_mat(6, 4, 6));
    GateParams g = make_gate(4, 7, 2.0);
    diff::DiffNode w = diff::sigmoid(
        diff::pointwise_linear(diff::concat_cols(x, y), g.fc.w, g.fc.b));
    CHECK(w.value().minCoeff() > 0.0);
    CHECK(w.value().maxCoeff() < 1.0);

    // fused output lies between the two per-point gated extremes
    diff::DiffNode out = gate_fuse(x, y, g);
    CHECK(out.rows() == 6);
    CHECK(out.cols() == 4);
}

TEST_CASE("gate_fuse gradients match finite differences") {
    diff::DiffNode x = diff::DiffNode::param(random_mat(4, 3, 8));
    diff::DiffNode y = diff::DiffNode::param(random_mat(4, 3, 9));
    GateParams g = make_gate(3, 10, 0.3);
    std::vector<diff::DiffNode> params = {x, y, g.fc.w, g.fc.b};
    auto f = [&] { return diff::reduce_sum(diff::rownorm(gate_fuse(x, y, g))); };
    CHECK(diff::grad_check(f, params, 1e-5) <= 1e-4);

    CHECK_THROWS_AS(gate_fuse(x, diff::DiffNode::param(random_mat(5, 3, 11)), g),
                    std::invalid_argument);
}

TEST_CASE("tdkr single level is a bare projection") {
    diff::ParamStore store;
    Rng rng(12);
    std::vector<LevelFeature> stack(1);
    stack[0] = {0, random_mat(5, 3, 13), diff::DiffNode::param(random_mat(5, 4, 14)), false};
    BkrParams p = BkrParams::create(store, "bkr", {4}, {6}, Mode::tdkr_fmd, rng);
    auto td = tdkr(stack, p);
    REQUIRE(td.size() == 1);
    Mat expected = stack[0].features.value() * p.td_proj_s[0].w.value();
    expected.rowwise() += p.td_proj_s[0].b.value().row(0);
    CHECK((td[0].value() - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tdkr output dims equal teacher dims on a 3-level stack") {
    diff::ParamStore store;
    Rng rng(15);
    std::vector<int> student_dims = {4, 8, 16};
    std::vector<int> teacher_dims = {32, 64, 128};
    auto stack = make_stack(student_dims, 20);
    BkrParams p = BkrParams::create(store, "bkr", student_dims, teacher_dims,
                                    Mode::tdkr_fmd, rng);
    auto td = tdkr(stack, p);
    REQUIRE(td.size() == 3);
    for (std::size_t l = 0; l < 3; ++l) {
        CHECK(td[l].rows() == stack[l].positions.rows());
        CHECK(td[l].cols() == teacher_dims[l]);
    }
}

TEST_CASE("bukr base case and gradient reach to every level") {
    diff::ParamStore store;
    Rng rng(16);
    std::vector<int> student_dims = {4, 8, 16};
    std::vector<int> teacher_dims = {16, 24, 48};
    auto stack = make_stack(student_dims, 21);
    BkrParams p = BkrParams::create(store, "bkr", student_dims, teacher_dims,
                                    Mode::tdkr_bukr_fmd, rng);
    auto td = tdkr(stack, p);
    auto bu = bukr(td, stack, p);
    REQUIRE(bu.size() == 3);
    for (std::size_t l = 0; l < 3; ++l) {
        CHECK(bu[l].rows() == stack[l].positions.rows());
        CHECK(bu[l].cols() == teacher_dims[l]);
    }

    // gradient from the top BU output reaches every level's input features
    for (auto& lv : stack) lv.features.zero_grad();
    diff::backward(diff::reduce_sum(diff::rownorm(bu[2])));
    for (std::size_t l = 0; l < 3; ++l) {
        CHECK(stack[l].features.has_grad());
        CHECK(stack[l].features.grad().cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("reconfigure per-mode output selection") {
    std::vector<int> student_dims = {4, 8, 16};
    std::vector<int> teacher_dims = {8, 12, 20};

    auto run = [&](Mode mode) {
        diff::ParamStore store;
        Rng rng(17);
        auto stack = make_stack(student_dims, 22);
        BkrParams p =
            BkrParams::create(store, "bkr", student_dims, teacher_dims, mode, rng);
        return std::pair(reconfigure(stack, p), p);
    };

    SUBCASE("fmd output is exactly the projected student feature") {
        auto [stack_out, p] = run(Mode::fmd);
        auto stack = make_stack(student_dims, 22);
        for (std::size_t l = 0; l < 3; ++l) {
            Mat expected = stack[l].features.value() * p.proj[l].w.value();
            expected.rowwise() += p.proj[l].b.value().row(0);
            CHECK((stack_out.out[l].value() - expected).cwiseAbs().maxCoeff() == 0.0);
        }
        CHECK(stack_out.td.empty());
        CHECK(stack_out.bu.empty());
    }

    SUBCASE("tdkr mode output is bit-identical to the tdkr pass") {
        auto [stack_out, p] = run(Mode::tdkr_fmd);
        auto stack = make_stack(student_dims, 22);
        auto td = tdkr(stack, p);
        for (std::size_t l = 0; l < 3; ++l)
            CHECK((stack_out.out[l].value() - td[l].value()).cwiseAbs().maxCoeff() == 0.0);
        CHECK(stack_out.bu.empty());
    }

    SUBCASE("tdkr+bukr mode outputs the bottom-up pass") {
        auto [stack_out, p] = run(Mode::tdkr_bukr_fmd);
        auto stack = make_stack(student_dims, 22);
        auto bu = bukr(tdkr(stack, p), stack, p);
        for (std::size_t l = 0; l < 3; ++l)
            CHECK((stack_out.out[l].value() - bu[l].value()).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("bkr mode adds the residual projection") {
        auto [stack_out, p] = run(Mode::bkr_fmd);
        auto stack = make_stack(student_dims, 22);
        auto bu = bukr(tdkr(stack, p), stack, p);
        for (std::size_t l = 0; l < 3; ++l) {
            Mat proj = stack[l].features.value() * p.proj[l].w.value();
            proj.rowwise() += p.proj[l].b.value().row(0);
            CHECK((stack_out.out[l].value() - (bu[l].value() + proj)).cwiseAbs().maxCoeff() ==
                  0.0);
        }
    }

    SUBCASE("row counts never change") {
        for (Mode mode : all_modes()) {
            auto [stack_out, p] = run(mode);
            auto stack = make_stack(student_dims, 22);
            for (std::size_t l = 0; l < 3; ++l)
                CHECK(stack_out.out[l].rows() == stack[l].positions.rows());
        }
    }
}

TEST_CASE("reconfigure with zeroed cross-level parameters is the identity path") {
    std::vector<int> student_dims = {4, 8, 16};
    std::vector<int> teacher_dims = {8, 12, 20};
    diff::ParamStore store;
    Rng rng(18);
    auto stack = make_stack(student_dims, 23);
    BkrParams p =
        BkrParams::create(store, "bkr", student_dims, teacher_dims, Mode::bkr_fmd, rng);
    for (const auto& [name, param] : store.all()) {
        diff::DiffNode handle = param;
        if (name.rfind("bkr.proj.", 0) != 0) handle.mutable_value().setZero();
    }
    ReconfiguredStack out = reconfigure(stack, p);
    for (std::size_t l = 0; l < 3; ++l) {
        Mat proj = stack[l].features.value() * p.proj[l].w.value();
        proj.rowwise() += p.proj[l].b.value().row(0);
        CHECK((out.out[l].value() - proj).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("end-to-end gradient through tdkr, bukr, residual and fmd") {
    std::vector<int> student_dims = {3, 5};
    std::vector<int> teacher_dims = {6, 9};
    diff::ParamStore store;
    Rng rng(19);

    std::vector<LevelFeature> stack(2);
    Mat p0 = random_mat(7, 3, 24, 0.5);
    Mat p1 = p0.topRows(3);
    stack[0] = {0, p0, diff::DiffNode::constant(random_mat(7, 3, 25)), false};
    stack[1] = {1, p1, diff::DiffNode::constant(random_mat(3, 5, 26)), false};

    Mat pos_t0 = random_mat(7, 3, 27, 0.5);
    Mat pos_t1 = pos_t0.topRows(3);
    Mat f_t0 = random_mat(7, 6, 28);
    Mat f_t1 = random_mat(3, 9, 29);

    BkrParams p =
        BkrParams::create(store, "bkr", student_dims, teacher_dims, Mode::bkr_fmd, rng);
    std::vector<diff::DiffNode> params;
    for (const auto& [name, param] : store.all()) params.push_back(param);

    auto f = [&] {
        ReconfiguredStack out = reconfigure(stack, p);
        ot::FmdOptions opt;
        opt.k = 2;
        opt.tau = 0.5;
        return diff::add(ot::fmd_loss(out.out[0], stack[0].positions, f_t0, pos_t0, opt),
                         ot::fmd_loss(out.out[1], stack[1].positions, f_t1, pos_t1, opt));
    };
    CHECK(diff::grad_check(f, params, 1e-5) <= 1e-4);
}

TEST_CASE("mode helpers and parsing") {
    CHECK(mode_from_string("bkr_fmd") == Mode::bkr_fmd);
    CHECK(to_string(Mode::tdkr_bukr_fmd) == "tdkr_bukr_fmd");
    CHECK_THROWS_AS(mode_from_string("nope"), ConfigError);
    CHECK(all_modes().size() == 7);
    CHECK_FALSE(mode_uses_tdkr(Mode::fl2));
    CHECK(mode_uses_bukr(Mode::bukr_fmd));
    CHECK(mode_uses_residual(Mode::bkr_fmd));
}
