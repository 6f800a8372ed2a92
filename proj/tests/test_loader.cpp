#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sdeattn/loader.hpp"

using namespace sdeattn;

#ifndef SDEATTN_TEST_DATA_DIR
#define SDEATTN_TEST_DATA_DIR "tests/data"
#endif

namespace {

std::string fixture(const std::string& name) { return std::string(SDEATTN_TEST_DATA_DIR) + "/" + name; }

std::string write_temp(const std::string& stem, const std::string& content) {
    const auto path = (std::filesystem::temp_directory_path() / stem).string();
    std::ofstream os(path);
    os << content;
    return path;
}

}  // namespace

TEST_CASE("the bundled excerpt parses with the expected shapes and labels") {
    auto data = read_series_file(fixture("excerpt10.ts"), SeriesFormat::repository);
    CHECK(data.name == "excerpt10");
    CHECK(data.dim == 2);
    CHECK(data.classes == 2);
    REQUIRE(data.batches.size() == 1);
    const auto& batch = data.batches[0];
    CHECK(batch.steps() == 8);
    CHECK(batch.series() == 10);
    CHECK(batch.dim() == 2);
    batch.validate();

    for (int j = 0; j < 10; ++j) CHECK(batch.labels[static_cast<std::size_t>(j)] == (j < 5 ? 0 : 1));

    // hand-checked entries straight from the file
    CHECK(batch.values(0, 0, 0) == 0.0);
    CHECK(batch.values(3, 0, 0) == 0.03);
    CHECK(batch.values(0, 2, 1) == 11.0);
    CHECK(batch.values(7, 9, 0) == 9.07);
    CHECK(batch.values(1, 6, 1) == 12.98);

    // the single '?' arrives masked out
    CHECK(batch.mask(4, 3, 1) == 0.0);
    CHECK(batch.values(4, 3, 1) == 0.0);
    CHECK(batch.mask(4, 3, 0) == 1.0);

    // regular grid rescaled into (0, 1]
    CHECK(batch.timestamps.front() == doctest::Approx(1.0 / 8.0));
    CHECK(batch.timestamps.back() == doctest::Approx(1.0));
}

TEST_CASE("malformed inputs are rejected with clear errors") {
    const auto headerless = write_temp("sdeattn_noheader.ts", "1,2,3:1\n");
    CHECK_THROWS_WITH_AS(read_series_file(headerless, SeriesFormat::repository),
                         doctest::Contains("'@' directive"), std::runtime_error);
    std::remove(headerless.c_str());

    const auto nodata = write_temp("sdeattn_nodata.ts", "@problemName x\n@classLabel true 1\n");
    CHECK_THROWS_WITH_AS(read_series_file(nodata, SeriesFormat::repository), doctest::Contains("@data"),
                         std::runtime_error);
    std::remove(nodata.c_str());

    const auto ragged = write_temp("sdeattn_ragged.ts",
                                   "@problemName x\n@classLabel true 1 2\n@data\n1,2,3:1\n1,2:2\n");
    CHECK_THROWS_WITH_AS(read_series_file(ragged, SeriesFormat::repository),
                         doctest::Contains("inconsistent series lengths"), std::runtime_error);
    std::remove(ragged.c_str());

    const auto garbage = write_temp("sdeattn_value.ts", "@problemName x\n@classLabel true 1\n@data\n1,zap,3:1\n");
    CHECK_THROWS_WITH_AS(read_series_file(garbage, SeriesFormat::repository), doctest::Contains("zap"),
                         std::runtime_error);
    std::remove(garbage.c_str());
}

TEST_CASE("test-split labels outside the train set are rejected") {
    const auto train = write_temp("sdeattn_pair_train.ts",
                                  "@problemName pair\n@classLabel true 1 2\n@data\n1,2,3:1\n4,5,6:2\n");
    const auto test = write_temp("sdeattn_pair_test.ts",
                                 "@problemName pair\n@classLabel true 1 2 3\n@data\n1,2,3:3\n");
    CHECK_THROWS_WITH_AS(load_dataset_pair(train, test, SeriesFormat::repository),
                         doctest::Contains("unknown class label"), std::runtime_error);
    std::remove(train.c_str());
    std::remove(test.c_str());
}

TEST_CASE("train statistics normalize both splits to zero mean unit variance") {
    const auto dir = std::filesystem::temp_directory_path();
    auto excerpt = read_series_file(fixture("excerpt10.ts"), SeriesFormat::repository);
    const auto train_csv = (dir / "sdeattn_norm_train.csv").string();
    write_series_csv(excerpt, train_csv);
    const auto test_csv = (dir / "sdeattn_norm_test.csv").string();
    write_series_csv(excerpt, test_csv);

    auto pair = load_dataset_pair(train_csv, test_csv, SeriesFormat::csv);
    std::remove(train_csv.c_str());
    std::remove(test_csv.c_str());

    const auto& batch = pair.train.batches[0];
    for (std::int64_t c = 0; c < 2; ++c) {
        double sum = 0.0, sumsq = 0.0, n = 0.0;
        for (std::int64_t k = 0; k < batch.steps(); ++k)
            for (std::int64_t j = 0; j < batch.series(); ++j) {
                if (batch.mask(k, j, c) == 0.0) continue;
                sum += batch.values(k, j, c);
                sumsq += batch.values(k, j, c) * batch.values(k, j, c);
                n += 1.0;
            }
        const double mean = sum / n;
        const double var = sumsq / n - mean * mean;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-10);
    }
    CHECK(pair.train.norm_mean.size() == 2);
    CHECK(pair.test.norm_mean == pair.train.norm_mean);
}

TEST_CASE("csv export and re-import is exact") {
    auto data = read_series_file(fixture("excerpt10.ts"), SeriesFormat::repository);
    const auto path = (std::filesystem::temp_directory_path() / "sdeattn_roundtrip.csv").string();
    write_series_csv(data, path);
    auto back = read_series_file(path, SeriesFormat::csv);
    std::remove(path.c_str());

    CHECK(sniff_format(path) == SeriesFormat::csv);
    CHECK(sniff_format("some/dir/file.ts") == SeriesFormat::repository);

    REQUIRE(back.batches.size() == 1);
    const auto& a = data.batches[0];
    const auto& b = back.batches[0];
    CHECK(a.values.shape() == b.values.shape());
    for (std::int64_t i = 0; i < a.values.size(); ++i) {
        CHECK(a.values.data()[i] == b.values.data()[i]);
        CHECK(a.mask.data()[i] == b.mask.data()[i]);
    }
    CHECK(a.labels == b.labels);
}
