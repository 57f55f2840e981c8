#include <doctest.h>

#include <cmath>

#include "irdseg/errors.hpp"
#include "irdseg/metrics.hpp"
#include "irdseg/prng.hpp"

using namespace irdseg;

TEST_CASE("accumulate") {
    SUBCASE("perfect prediction fills the diagonal") {
        ConfusionMatrix cm(3);
        Tensor label({2, 2});
        label[0] = 0;
        label[1] = 1;
        label[2] = 2;
        label[3] = 1;
        cm.accumulate(label, label);
        CHECK(cm.count(0, 0) == 1);
        CHECK(cm.count(1, 1) == 2);
        CHECK(cm.count(2, 2) == 1);
        CHECK(cm.total() == 4);
    }
    SUBCASE("ignored pixels are skipped") {
        ConfusionMatrix cm(3, 2);
        const Tensor label({2, 2}, 2.0);
        const Tensor pred({2, 2}, 1.0);
        cm.accumulate(pred, label);
        CHECK(cm.total() == 0);
    }
    SUBCASE("hand-counted 2x2 image") {
        ConfusionMatrix cm(3);
        Tensor label({2, 2}), pred({2, 2});
        label[0] = 0; pred[0] = 0;
        label[1] = 1; pred[1] = 2;
        label[2] = 2; pred[2] = 2;
        label[3] = 0; pred[3] = 1;
        cm.accumulate(pred, label);
        CHECK(cm.count(0, 0) == 1);
        CHECK(cm.count(1, 2) == 1);
        CHECK(cm.count(2, 2) == 1);
        CHECK(cm.count(0, 1) == 1);
    }
    SUBCASE("out-of-range id rejected") {
        ConfusionMatrix cm(2);
        const Tensor label({1, 1}, 5.0);
        CHECK_THROWS_AS(cm.accumulate(label, label), std::invalid_argument);
    }
}

TEST_CASE("metric formulas") {
    SUBCASE("diagonal matrix scores 100 on everything") {
        ConfusionMatrix cm(3);
        cm.add(0, 0, 10);
        cm.add(1, 1, 5);
        cm.add(2, 2, 7);
        CHECK(pixel_accuracy(cm) == 100.0);
        CHECK(class_accuracy(cm) == 100.0);
        CHECK(mean_iou(cm) == 100.0);
        CHECK(fw_iou(cm) == 100.0);
    }
    SUBCASE("hand-computed [[3,1],[1,3]]") {
        ConfusionMatrix cm(2);
        cm.add(0, 0, 3);
        cm.add(0, 1, 1);
        cm.add(1, 0, 1);
        cm.add(1, 1, 3);
        CHECK(pixel_accuracy(cm) == doctest::Approx(75.0));
        CHECK(class_accuracy(cm) == doctest::Approx(75.0));
        CHECK(mean_iou(cm) == doctest::Approx(60.0));
        CHECK(fw_iou(cm) == doctest::Approx(60.0));
    }
    SUBCASE("absent class excluded from averages") {
        ConfusionMatrix cm(2);
        cm.add(0, 0, 4);
        CHECK(pixel_accuracy(cm) == 100.0);
        CHECK(class_accuracy(cm) == 100.0);
        CHECK(mean_iou(cm) == 100.0);
        CHECK(fw_iou(cm) == 100.0);
    }
    SUBCASE("empty matrix rejected") {
        ConfusionMatrix cm(2);
        CHECK_THROWS_AS(pixel_accuracy(cm), std::invalid_argument);
    }
    SUBCASE("metrics stay within [0, 100]") {
        Prng rng(41);
        for (int trial = 0; trial < 25; ++trial) {
            ConfusionMatrix cm(4);
            for (std::size_t t = 0; t < 4; ++t) {
                for (std::size_t p = 0; p < 4; ++p) cm.add(t, p, rng.uniform_int(0, 20));
            }
            if (cm.total() == 0) continue;
            for (double v : {pixel_accuracy(cm), class_accuracy(cm), mean_iou(cm), fw_iou(cm)}) {
                CHECK(v >= 0.0);
                CHECK(v <= 100.0);
            }
        }
    }
    SUBCASE("equal class frequencies make fwIoU equal mIoU") {
        ConfusionMatrix cm(2);
        cm.add(0, 0, 6);
        cm.add(0, 1, 2);
        cm.add(1, 1, 6);
        cm.add(1, 0, 2);
        CHECK(fw_iou(cm) == doctest::Approx(mean_iou(cm)));
    }
}

TEST_CASE("permutation invariance") {
    Prng rng(43);
    Tensor label({8, 8}), pred({8, 8});
    for (std::size_t i = 0; i < 64; ++i) {
        label[i] = static_cast<double>(rng.uniform_int(0, 2));
        pred[i] = static_cast<double>(rng.uniform_int(0, 2));
    }
    ConfusionMatrix cm(3);
    cm.accumulate(pred, label);

    const std::size_t perm[3] = {2, 0, 1};
    Tensor plabel({8, 8}), ppred({8, 8});
    for (std::size_t i = 0; i < 64; ++i) {
        plabel[i] = static_cast<double>(perm[static_cast<std::size_t>(label[i])]);
        ppred[i] = static_cast<double>(perm[static_cast<std::size_t>(pred[i])]);
    }
    ConfusionMatrix pcm(3);
    pcm.accumulate(ppred, plabel);

    CHECK(pixel_accuracy(pcm) == doctest::Approx(pixel_accuracy(cm)).epsilon(1e-12));
    CHECK(class_accuracy(pcm) == doctest::Approx(class_accuracy(cm)).epsilon(1e-12));
    CHECK(mean_iou(pcm) == doctest::Approx(mean_iou(cm)).epsilon(1e-12));
    CHECK(fw_iou(pcm) == doctest::Approx(fw_iou(cm)).epsilon(1e-12));
}

TEST_CASE("split accumulation merges to the whole") {
    Prng rng(47);
    Tensor label({6, 10}), pred({6, 10});
    for (std::size_t i = 0; i < 60; ++i) {
        label[i] = static_cast<double>(rng.uniform_int(0, 3));
        pred[i] = static_cast<double>(rng.uniform_int(0, 3));
    }
    ConfusionMatrix whole(4);
    whole.accumulate(pred, label);

    // split rows 0..2 and 3..5
    Tensor l1({3, 10}), p1({3, 10}), l2({3, 10}), p2({3, 10});
    for (std::size_t i = 0; i < 30; ++i) {
        l1[i] = label[i];
        p1[i] = pred[i];
        l2[i] = label[30 + i];
        p2[i] = pred[30 + i];
    }
    ConfusionMatrix a(4), b(4);
    a.accumulate(p1, l1);
    b.accumulate(p2, l2);
    a.merge(b);
    CHECK(a == whole);
}

TEST_CASE("metric report records") {
    const MetricReport r{97.73, 85.98, 79.73, 95.68};
    const std::string block = format_metric_block(r);
    CHECK(block.find("pixel_accuracy 97.73") != std::string::npos);
    CHECK(block.find("fw_iou 95.68") != std::string::npos);

    const std::string line = format_metric_record(r);
    const MetricReport back = parse_metric_record(line);
    CHECK(back.pixel_acc == doctest::Approx(r.pixel_acc));
    CHECK(back.class_acc == doctest::Approx(r.class_acc));
    CHECK(back.mean_iou == doctest::Approx(r.mean_iou));
    CHECK(back.fw_iou == doctest::Approx(r.fw_iou));

    CHECK_THROWS_AS(parse_metric_record("pixel_accuracy=1.0"), IoError);
    CHECK_THROWS_AS(parse_metric_record("bogus=1 pixel_accuracy=1 class_accuracy=1 mean_iou=1"),
                    IoError);
}
