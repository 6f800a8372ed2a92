#pragma once

// Readers for classification benchmark files.
//
// Repository text format: '@' header directives followed by '@data'; one
// series per line, channels separated by ':', values comma separated, the
// class label last when '@classLabel true ...' is declared. A bare '?' marks
// a missing value and arrives masked out.
//
// CSV fallback (written by write_series_csv, bit-exact round trip):
//   # sdeattn-series T=<steps> D=<channels> labeled=<0|1>
//   <label>,<v(t0,c0)>,<v(t0,c1)>,...,<v(t1,c0)>,...
// Unlabeled rows carry '?' in the label column.
//
// Series are emitted as one batch on the regular grid (k+1)/T, k = 0..T-1.
// load_dataset_pair z-normalizes both splits per channel with statistics
// from the observed entries of the train split.

#include <string>
#include <vector>

#include "sdeattn/data.hpp"

namespace sdeattn {

enum class SeriesFormat { repository, csv };

// Guesses from the extension: .ts/.arff -> repository, everything else csv.
SeriesFormat sniff_format(const std::string& path);

Dataset read_series_file(const std::string& path, SeriesFormat format);

void write_series_csv(const Dataset& data, const std::string& path);

// Per-channel mean / standard deviation over observed entries.
std::pair<std::vector<double>, std::vector<double>> channel_stats(const Dataset& data);

// (x - mean) / sd per channel on observed entries; channels with zero
// spread pass through unscaled. Stats are recorded on the dataset.
void normalize_channels(Dataset& data, const std::vector<double>& mean, const std::vector<double>& sd);

struct SplitPair {
    Dataset train;
    Dataset test;
};

// Loads both splits, checks the test labels against the train label set,
// and normalizes both with train statistics.
SplitPair load_dataset_pair(const std::string& train_path, const std::string& test_path, SeriesFormat format);

}  // namespace sdeattn
