// Covers checkpoint persistence, the five strategy constructions and their
// freeze masks, the frozen-parameter audit, binary label merging, the
// pre-training pipeline, and sliding-window inference.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "volseg/inference.hpp"
#include "volseg/synthetic.hpp"
#include "volseg/transfer.hpp"

using volseg::Checkpoint;
using volseg::ConfigError;
using volseg::DataError;
using volseg::Mask;
using volseg::ModelKind;
using volseg::NetworkSpec;
using volseg::ParamStore;
using volseg::PretrainConfig;
using volseg::Rng;
using volseg::StrategyConfig;
using volseg::StrategyKind;
using volseg::TaskCases;
using volseg::Tensor;
using volseg::TrainableSetup;
using volseg::Volume;

namespace {

NetworkSpec tiny_spec() {
    NetworkSpec s;
    s.num_stages = 2;
    s.base_channels = 4;
    s.channels_per_stage = {4, 6};
    s.strides_per_stage = {{1, 1, 1}, {2, 2, 2}};
    s.num_classes = 2;
    return s;
}

NetworkSpec small_spec() {
    NetworkSpec s;
    s.num_stages = 2;
    s.base_channels = 8;
    s.channels_per_stage = {8, 16};
    s.strides_per_stage = {{1, 1, 1}, {2, 2, 2}};
    s.num_classes = 2;
    return s;
}

volseg::FamilySpec small_family(const std::string& name) {
    volseg::FamilySpec f = volseg::make_family(name);
    f.shape = {16, 24, 24};
    f.min_radius = 2.5;
    f.max_radius = 4.5;
    return f;
}

std::vector<std::pair<Volume, Mask>> make_corpus(const volseg::FamilySpec& family,
                                                 int n, uint64_t seed) {
    std::vector<std::pair<Volume, Mask>> out;
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng(seed).fork(static_cast<uint64_t>(i));
        out.push_back(volseg::gen_synthetic_case(
            rng, family, family.name + "_" + std::to_string(i)));
    }
    return out;
}

Checkpoint make_ckpt(const NetworkSpec& spec, uint64_t seed) {
    Checkpoint c;
    c.spec = spec;
    c.params = volseg::init_params(spec, seed);
    c.params.seed = seed;
    c.epoch = 11;
    c.val_dice = 0.8125;
    c.task = "blob";
    c.stats = {-1.5, 2.5, 0.25, 1.75};
    return c;
}

bool stores_equal(const ParamStore& a, const ParamStore& b) {
    if (a.names() != b.names()) return false;
    for (const auto& [name, p] : a.entries()) {
        if (p.frozen != b.at(name).frozen) return false;
        if (!volseg::bitwise_equal(p.value, b.at(name).value)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("checkpoint save/load round-trips bit-exactly") {
    Checkpoint c = make_ckpt(tiny_spec(), 7);
    c.params.set_frozen("encoder/", true);
    const std::string path = "ckpt_roundtrip.bin";
    volseg::save_checkpoint(path, c);
    const Checkpoint r = volseg::load_checkpoint(path);
    std::remove(path.c_str());

    CHECK(stores_equal(c.params, r.params));
    CHECK(r.params.seed == 7);
    CHECK(r.epoch == 11);
    CHECK(r.val_dice == 0.8125);
    CHECK(r.task == "blob");
    CHECK(r.stats.p_lo == -1.5);
    CHECK(r.stats.p_hi == 2.5);
    CHECK(r.stats.mean == 0.25);
    CHECK(r.stats.std == 1.75);
    CHECK(volseg::spec_to_json(r.spec) == volseg::spec_to_json(c.spec));

    // arbitrary doubles survive the JSON header
    Checkpoint c2 = make_ckpt(tiny_spec(), 3);
    c2.val_dice = 0.1 + 0.2;  // not exactly representable as a short decimal
    volseg::save_checkpoint(path, c2);
    CHECK(volseg::load_checkpoint(path).val_dice == c2.val_dice);
    std::remove(path.c_str());

    CHECK_THROWS_AS(volseg::load_checkpoint("no_such_ckpt.bin"), DataError);
    std::ofstream bad("ckpt_garbage.bin", std::ios::binary);
    bad << "not a checkpoint at all";
    bad.close();
    CHECK_THROWS_AS(volseg::load_checkpoint("ckpt_garbage.bin"), DataError);
    std::remove("ckpt_garbage.bin");

    CHECK_THROWS_AS(volseg::check_spec_match(c, NetworkSpec::desk_default(), "t"),
                    ConfigError);
}

TEST_CASE("strategy names parse both short and long forms") {
    CHECK(volseg::strategy_from_string("scratch") == StrategyKind::kFromScratch);
    CHECK(volseg::strategy_from_string("from_scratch") == StrategyKind::kFromScratch);
    CHECK(volseg::strategy_from_string("continual") == StrategyKind::kContinual);
    CHECK(volseg::strategy_from_string("body") == StrategyKind::kBodyFinetune);
    CHECK(volseg::strategy_from_string("body_finetune") ==
          StrategyKind::kBodyFinetune);
    CHECK(volseg::strategy_from_string("frozen") == StrategyKind::kFrozenEncoder);
    CHECK(volseg::strategy_from_string("frozen_encoder") ==
          StrategyKind::kFrozenEncoder);
    CHECK(volseg::strategy_from_string("hybrid") == StrategyKind::kHybrid);
    CHECK_THROWS_AS(volseg::strategy_from_string("finetune"), ConfigError);
    for (const auto k :
         {StrategyKind::kFromScratch, StrategyKind::kContinual,
          StrategyKind::kBodyFinetune, StrategyKind::kFrozenEncoder,
          StrategyKind::kHybrid})
        CHECK(volseg::strategy_from_string(volseg::strategy_to_string(k)) == k);
}

TEST_CASE("the five strategies initialize and freeze as declared") {
    const NetworkSpec spec = tiny_spec();
    const Checkpoint ckpt = make_ckpt(spec, 7);

    StrategyConfig cfg;
    cfg.seed = 5;

    cfg.kind = StrategyKind::kFromScratch;
    const TrainableSetup scratch = apply_strategy(cfg, spec, nullptr);
    CHECK(scratch.model == ModelKind::kPlain);
    CHECK(scratch.start_epoch == 0);
    CHECK(scratch.frozen_subtree.empty());
    CHECK(stores_equal(scratch.params, volseg::init_params(spec, 5)));
    CHECK(scratch.params.trainable_scalars() == scratch.params.total_scalars());

    cfg.kind = StrategyKind::kBodyFinetune;
    const TrainableSetup body = apply_strategy(cfg, spec, &ckpt);
    CHECK(body.start_epoch == 0);
    CHECK(stores_equal(body.params, ckpt.params));  // bitwise, nothing frozen
    CHECK(body.params.trainable_scalars() == body.params.total_scalars());

    cfg.kind = StrategyKind::kContinual;
    const TrainableSetup cont = apply_strategy(cfg, spec, &ckpt);
    CHECK(cont.start_epoch == 11);  // schedule continues where training stopped
    CHECK(stores_equal(cont.params, body.params));

    cfg.kind = StrategyKind::kFrozenEncoder;
    const TrainableSetup froz = apply_strategy(cfg, spec, &ckpt);
    CHECK(froz.frozen_subtree == "encoder/");
    const ParamStore fresh = volseg::init_params(spec, 5);
    for (const auto& [name, p] : froz.params.entries()) {
        if (name.rfind("encoder/", 0) == 0) {
            CHECK(p.frozen);
            CHECK(volseg::bitwise_equal(p.value, ckpt.params.at(name).value));
        } else {
            CHECK_FALSE(p.frozen);
            CHECK(volseg::bitwise_equal(p.value, fresh.at(name).value));
        }
    }

    cfg.kind = StrategyKind::kHybrid;
    const TrainableSetup hyb = apply_strategy(cfg, spec, &ckpt);
    CHECK(hyb.model == ModelKind::kHybrid);
    CHECK(hyb.frozen_subtree == "adapted/");
    const ParamStore hfresh = volseg::init_hybrid_params(spec, 5);
    CHECK(hyb.params.names() == hfresh.names());
    for (const auto& [name, p] : hyb.params.entries()) {
        if (name.rfind("adapted/", 0) == 0) {
            CHECK(p.frozen);
            const std::string src = "encoder/" + name.substr(8);
            CHECK(volseg::bitwise_equal(p.value, ckpt.params.at(src).value));
        } else {
            CHECK_FALSE(p.frozen);
            CHECK(volseg::bitwise_equal(p.value, hfresh.at(name).value));
        }
    }

    // structural algebra: scratch and body share the graph, frozen differs
    // from body only in the freeze mask, continual only in the handoff
    CHECK(scratch.params.names() == body.params.names());
    CHECK(froz.params.names() == body.params.names());
    for (const auto& [name, p] : froz.params.entries())
        CHECK(p.frozen == (name.rfind("encoder/", 0) == 0));
    CHECK(cont.params.names() == body.params.names());
}

TEST_CASE("strategy construction refuses bad sources") {
    const NetworkSpec spec = tiny_spec();
    const Checkpoint ckpt = make_ckpt(spec, 7);
    StrategyConfig cfg;

    cfg.kind = StrategyKind::kBodyFinetune;
    CHECK_THROWS_AS(apply_strategy(cfg, spec, nullptr), ConfigError);
    CHECK_THROWS_AS(apply_strategy(cfg, spec), ConfigError);  // no path either

    // architecture mismatch is rejected before any weight moves
    CHECK_THROWS_AS(apply_strategy(cfg, NetworkSpec::desk_default(), &ckpt),
                    ConfigError);

    // a two-branch checkpoint cannot seed a single-encoder strategy
    Checkpoint hybrid_src = ckpt;
    hybrid_src.params = volseg::init_hybrid_params(spec, 7);
    CHECK_THROWS_AS(apply_strategy(cfg, spec, &hybrid_src), ConfigError);

    cfg.kind = StrategyKind::kFromScratch;
    CHECK_NOTHROW(apply_strategy(cfg, spec, nullptr));
}

TEST_CASE("trainable fraction drops below 60% when the encoder freezes") {
    const NetworkSpec spec = NetworkSpec::desk_default();
    const Checkpoint ckpt = make_ckpt(spec, 2);
    StrategyConfig cfg;
    cfg.kind = StrategyKind::kFrozenEncoder;
    cfg.seed = 3;
    const TrainableSetup froz = apply_strategy(cfg, spec, &ckpt);
    const double fraction =
        static_cast<double>(froz.params.trainable_scalars()) /
        static_cast<double>(froz.params.total_scalars());
    CHECK(fraction < 0.6);
    CHECK(fraction > 0.0);
}

TEST_CASE("verify_frozen flags any drifted frozen parameter") {
    ParamStore a = volseg::init_params(tiny_spec(), 7);
    a.set_frozen("encoder/", true);
    ParamStore b = a;
    CHECK(volseg::verify_frozen(a, b).empty());

    // a one-billionth nudge on a frozen weight is reported by name
    const std::string victim = "encoder/stage0/block0/conv_w";
    b.at(victim).value[0] += 1e-9;
    const auto report = volseg::verify_frozen(a, b);
    REQUIRE(report.size() == 1);
    CHECK(report[0] == victim);

    // trainable drift is not a violation
    ParamStore c = a;
    c.at("decoder/entry/conv_w").value[0] += 42.0;
    CHECK(volseg::verify_frozen(a, c).empty());

    // same names but different tensor shapes is a precondition failure
    ParamStore d = volseg::init_params(small_spec(), 7);
    CHECK_THROWS_AS(volseg::verify_frozen(a, d), ConfigError);

    // so is a different name set
    NetworkSpec one = tiny_spec();
    one.num_stages = 1;
    one.channels_per_stage = {4};
    one.strides_per_stage = {{1, 1, 1}};
    ParamStore e = volseg::init_params(one, 7);
    CHECK_THROWS_AS(volseg::verify_frozen(a, e), ConfigError);
}

TEST_CASE("label merging collapses every lesion type onto class 1") {
    Mask m;
    m.shape = {1, 1, 5};
    m.num_classes = 4;
    m.labels = {0, 1, 2, 3, 0};
    volseg::merge_to_binary(m);
    CHECK(m.labels == std::vector<uint8_t>{0, 1, 1, 1, 0});
    CHECK(m.num_classes == 2);
    volseg::merge_to_binary(m);  // idempotent
    CHECK(m.labels == std::vector<uint8_t>{0, 1, 1, 1, 0});
}

TEST_CASE("task-uniform batches ignore corpus size") {
    std::vector<volseg::TrainCase> cases;
    for (int i = 0; i < 30; ++i) cases.push_back({{}, {}, "big"});
    for (int i = 0; i < 3; ++i) cases.push_back({{}, {}, "small"});

    Rng rng(123);
    int64_t big = 0;
    for (int i = 0; i < 1000; ++i)
        if (volseg::pick_training_case(cases, true, rng) < 30) ++big;
    // uniform over the two tasks: both counts within 5% of half
    CHECK(big > 475);
    CHECK(big < 525);

    // without the flag the large corpus dominates
    Rng rng2(123);
    int64_t big_flat = 0;
    for (int i = 0; i < 1000; ++i)
        if (volseg::pick_training_case(cases, false, rng2) < 30) ++big_flat;
    CHECK(big_flat > 850);
}

TEST_CASE("sliding-window inference") {
    const NetworkSpec spec = tiny_spec();
    const ParamStore params = volseg::init_params(spec, 11);

    Volume v;
    v.shape = {4, 6, 6};
    v.case_id = "w";
    v.data.resize(static_cast<size_t>(v.numel()));
    Rng rng(4);
    for (auto& x : v.data) x = static_cast<float>(rng.normal());

    SUBCASE("a patch-sized volume reproduces the direct forward pass") {
        const Tensor probs =
            volseg::predict_probs(params, spec, ModelKind::kPlain, v, {4, 6, 6});
        REQUIRE(probs.shape() == std::vector<int64_t>{2, 4, 6, 6});

        Tensor in({1, 1, 4, 6, 6});
        for (int64_t i = 0; i < v.numel(); ++i)
            in[i] = static_cast<double>(v.data[static_cast<size_t>(i)]);
        volseg::ad::Tape tape;
        volseg::Binder bind(tape, params);
        const auto fwd =
            volseg::forward_model(tape, bind, tape.constant(std::move(in)), spec);
        const Tensor& logits = tape.value(fwd.logits[0]);
        const int64_t n = v.numel();
        for (int64_t i = 0; i < n; ++i) {
            const double mx = std::max(logits[i], logits[n + i]);
            const double e0 = std::exp(logits[i] - mx);
            const double e1 = std::exp(logits[n + i] - mx);
            CHECK(probs[i] == e0 / (e0 + e1));
            CHECK(probs[n + i] == e1 / (e0 + e1));
        }
    }

    SUBCASE("overlapping windows average to a normalized map") {
        Volume big;
        big.shape = {8, 6, 6};
        big.case_id = "big";
        big.data.resize(static_cast<size_t>(big.numel()));
        for (auto& x : big.data) x = static_cast<float>(rng.normal());
        const Tensor probs =
            volseg::predict_probs(params, spec, ModelKind::kPlain, big, {4, 6, 6});
        REQUIRE(probs.shape() == std::vector<int64_t>{2, 8, 6, 6});
        const int64_t n = big.numel();
        for (int64_t i = 0; i < n; ++i) {
            CHECK(std::isfinite(probs[i]));
            CHECK(std::abs(probs[i] + probs[n + i] - 1.0) < 1e-12);
        }
        // rerun is bit-identical
        const Tensor again =
            volseg::predict_probs(params, spec, ModelKind::kPlain, big, {4, 6, 6});
        CHECK(volseg::bitwise_equal(probs, again));
    }

    SUBCASE("sub-patch volumes are padded and cropped back") {
        Volume small;
        small.shape = {3, 6, 6};
        small.case_id = "small";
        small.data.resize(static_cast<size_t>(small.numel()), 0.5f);
        const Tensor probs =
            volseg::predict_probs(params, spec, ModelKind::kPlain, small, {4, 6, 6});
        REQUIRE(probs.shape() == std::vector<int64_t>{2, 3, 6, 6});
        for (int64_t i = 0; i < probs.numel(); ++i) CHECK(std::isfinite(probs[i]));
    }
}

TEST_CASE("argmax and soft overlap scoring") {
    const Tensor probs({2, 1, 1, 2}, {0.6, 0.5, 0.4, 0.5});
    const Mask m = volseg::argmax_labels(probs);
    CHECK(m.shape == std::array<int64_t, 3>{1, 1, 2});
    CHECK(m.labels == std::vector<uint8_t>{0, 0});  // tie resolves to class 0

    const Tensor probs2({2, 1, 1, 2}, {0.6, 0.3, 0.4, 0.7});
    CHECK(volseg::argmax_labels(probs2).labels == std::vector<uint8_t>{0, 1});

    Mask y;
    y.shape = {1, 1, 2};
    y.labels = {0, 1};
    const Tensor half({2, 1, 1, 2}, {0.5, 0.5, 0.5, 0.5});
    const double eps = 1e-5;
    CHECK(volseg::soft_dice(half, y) ==
          doctest::Approx((2.0 * 0.5 + eps) / (1.0 + 1.0 + eps)).epsilon(1e-15));

    // exact one-hot agreement scores exactly 1 (the smoothing cancels)
    const Tensor onehot({2, 1, 1, 2}, {1.0, 0.0, 0.0, 1.0});
    CHECK(volseg::soft_dice(onehot, y) == 1.0);
}

TEST_CASE("pre-training on the blob corpus converges and round-trips") {
    PretrainConfig cfg;
    cfg.spec = small_spec();
    cfg.train.epochs = 100;
    cfg.train.iters_per_epoch = 15;
    cfg.train.batch_size = 2;
    cfg.train.patch_size = {8, 12, 12};
    cfg.train.fg_bias = 0.4;
    cfg.train.seed = 1;
    cfg.train.early_stop_dice = 0.96;
    cfg.opt.max_epochs = 100;

    TaskCases blob;
    blob.task_id = "blob";
    blob.cases = make_corpus(small_family("blob"), 5, 41);

    const Checkpoint ckpt = volseg::pretrain_core({blob}, cfg, "blob");
    CHECK(ckpt.task == "blob");
    CHECK(ckpt.epoch >= 1);
    CHECK(ckpt.epoch <= 100);
    CHECK(ckpt.val_dice > 0.7);  // held-out fifth case
    CHECK(ckpt.stats.std > 0.0);
    for (const auto& [name, p] : ckpt.params.entries()) CHECK_FALSE(p.frozen);

    const std::string path = "ckpt_blob_test.bin";
    volseg::save_checkpoint(path, ckpt);
    const Checkpoint r = volseg::load_checkpoint(path);
    std::remove(path.c_str());
    CHECK(stores_equal(ckpt.params, r.params));
    CHECK(r.val_dice == ckpt.val_dice);
    CHECK(r.epoch == ckpt.epoch);
}

TEST_CASE("pre-training seeds steer weights but not structure") {
    PretrainConfig cfg;
    cfg.spec = small_spec();
    cfg.train.epochs = 1;
    cfg.train.iters_per_epoch = 1;
    cfg.train.batch_size = 1;
    cfg.train.patch_size = {8, 12, 12};
    cfg.opt.max_epochs = 1;

    TaskCases blob;
    blob.task_id = "blob";
    blob.cases = make_corpus(small_family("blob"), 3, 42);

    cfg.train.seed = 1;
    const Checkpoint a = volseg::pretrain_core({blob}, cfg, "blob");
    cfg.train.seed = 2;
    const Checkpoint b = volseg::pretrain_core({blob}, cfg, "blob");
    CHECK(a.params.names() == b.params.names());
    bool any_differ = false;
    for (const auto& [name, p] : a.params.entries())
        if (!volseg::bitwise_equal(p.value, b.params.at(name).value))
            any_differ = true;
    CHECK(any_differ);

    // same seed reproduces the exact weights
    cfg.train.seed = 1;
    const Checkpoint a2 = volseg::pretrain_core({blob}, cfg, "blob");
    CHECK(stores_equal(a.params, a2.params));
    CHECK(a.val_dice == a2.val_dice);
}

TEST_CASE("multi-task pre-training beats the untrained baseline on both families") {
    PretrainConfig cfg;
    cfg.spec = small_spec();
    cfg.train.epochs = 60;
    cfg.train.iters_per_epoch = 10;
    cfg.train.batch_size = 2;
    cfg.train.patch_size = {8, 12, 12};
    cfg.train.seed = 3;
    cfg.train.early_stop_dice = 0.85;
    cfg.opt.max_epochs = 60;

    TaskCases blob, shell;
    blob.task_id = "blob";
    blob.cases = make_corpus(small_family("blob"), 4, 51);
    shell.task_id = "shell";
    shell.cases = make_corpus(small_family("shell"), 4, 52);

    const Checkpoint ckpt = volseg::pretrain_core({blob, shell}, cfg, "multi_lesion");
    CHECK(ckpt.task == "multi_lesion");

    const ParamStore untrained = volseg::init_params(cfg.spec, 99);
    for (const auto& fam : {std::string("blob"), std::string("shell")}) {
        Rng rng = Rng(500).fork(fam == "blob" ? 0 : 1);
        auto [vol, mask] =
            volseg::gen_synthetic_case(rng, small_family(fam), "held_" + fam);
        volseg::merge_to_binary(mask);
        const Volume prep = volseg::preprocess(vol, ckpt.stats);
        const double trained = volseg::soft_dice(
            volseg::predict_probs(ckpt.params, cfg.spec, ModelKind::kPlain, prep,
                                  cfg.train.patch_size),
            mask);
        const double baseline = volseg::soft_dice(
            volseg::predict_probs(untrained, cfg.spec, ModelKind::kPlain, prep,
                                  cfg.train.patch_size),
            mask);
        INFO("family ", fam, ": trained ", trained, " baseline ", baseline);
        CHECK(trained > baseline);
    }
}

TEST_CASE("multi-task pre-training requires two tasks and path loading works") {
    PretrainConfig cfg;
    cfg.spec = small_spec();
    cfg.train.epochs = 1;
    cfg.train.iters_per_epoch = 1;
    cfg.train.batch_size = 1;
    cfg.train.patch_size = {8, 12, 12};
    cfg.opt.max_epochs = 1;

    volseg::PretrainTask only;
    only.task_id = "blob";
    CHECK_THROWS_AS(volseg::pretrain_multi({only}, cfg), ConfigError);

    // path-based entry: write two cases, point the task at them
    const auto corpus = make_corpus(small_family("blob"), 2, 61);
    volseg::PretrainTask task;
    task.task_id = "blobtask";
    for (size_t i = 0; i < corpus.size(); ++i) {
        const std::string p = "pt_case_" + std::to_string(i) + ".bin";
        volseg::save_case(p, corpus[i].first, corpus[i].second);
        task.case_paths.push_back(p);
    }
    const Checkpoint ckpt = volseg::pretrain_single(task, cfg);
    CHECK(ckpt.task == "blobtask");
    for (const auto& p : task.case_paths) std::remove(p.c_str());

    volseg::PretrainTask empty_task;
    empty_task.task_id = "none";
    CHECK_THROWS_AS(volseg::pretrain_single(empty_task, cfg), DataError);
}

TEST_CASE("training never moves a frozen parameter") {
    const NetworkSpec spec = small_spec();
    const Checkpoint src = make_ckpt(spec, 13);
    auto corpus = make_corpus(small_family("blob"), 2, 71);
    std::vector<volseg::TrainCase> cases;
    for (auto& [vol, mask] : corpus) {
        volseg::merge_to_binary(mask);
        cases.push_back({vol, mask, "blob"});
    }

    volseg::TrainConfig tc;
    tc.epochs = 2;
    tc.iters_per_epoch = 2;
    tc.batch_size = 1;
    tc.patch_size = {8, 12, 12};
    tc.seed = 9;

    StrategyConfig cfg;
    cfg.seed = 4;

    for (const auto kind : {StrategyKind::kFrozenEncoder, StrategyKind::kHybrid}) {
        cfg.kind = kind;
        TrainableSetup setup = apply_strategy(cfg, spec, &src);
        const ParamStore before = setup.params;
        volseg::Optimizer opt({0.01, 0.99, 2, 0.9});
        volseg::train_model(setup.params, spec, setup.model, cases, tc, opt);
        CHECK(volseg::verify_frozen(before, setup.params).empty());
        // and the trainable side did move
        bool moved = false;
        for (const auto& [name, p] : before.entries())
            if (!p.frozen &&
                !volseg::bitwise_equal(p.value, setup.params.at(name).value))
                moved = true;
        CHECK(moved);
    }
}
