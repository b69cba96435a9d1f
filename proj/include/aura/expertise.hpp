#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aura/corpus.hpp"
#include "aura/toylm.hpp"

namespace aura {

// Sentence-max activations, neuron-major: values[m * n_sentences + i].
struct ActivationMatrix {
    std::vector<NeuronId> neurons;
    std::vector<float> values;
    std::vector<std::uint8_t> labels;

    std::size_t n_neurons() const noexcept { return neurons.size(); }
    std::size_t n_sentences() const noexcept { return labels.size(); }
    std::span<const float> column_of(std::size_t m) const {
        return {values.data() + m * labels.size(), labels.size()};
    }
    void validate() const;
};

// Max over token positions (BOS excluded) of each neuron's hook-free
// activation, per sentence. Sentences are clipped to the context window.
ActivationMatrix capture(const ModelWeights& weights, const ConceptCorpus& corpus, const Tokenizer& tok,
                         std::span<const Site> sites);

// Mann-Whitney AUROC; ties between a positive and a negative count half.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);
// Sum over descending-score tie blocks of (recall gain) * precision.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);
// 1 at or below chance, otherwise 1 - Gini = 1 - 2 (auroc - 0.5).
double alpha_of(double auroc_value);
double gini_of(double auroc_value);

struct NeuronStats {
    NeuronId id;
    double auroc = 0.5;
    double ap = 0.0;
    double gini = 0.0;
    double alpha = 1.0;
    double mean_pos = 0.0;
    double mean_neg = 0.0;
    double var_all = 0.0;
};

class ExpertiseTable {
public:
    ExpertiseTable() = default;
    ExpertiseTable(std::vector<NeuronStats> rows, std::size_t n_pos, std::size_t n_neg);

    const std::vector<NeuronStats>& rows() const noexcept { return rows_; }
    std::size_t size() const noexcept { return rows_.size(); }
    std::size_t n_pos() const noexcept { return n_pos_; }
    std::size_t n_neg() const noexcept { return n_neg_; }

    const NeuronStats& at(const NeuronId& id) const;
    bool contains(const NeuronId& id) const { return index_.count(id) != 0; }
    // Mean of the sentence-max activation over all sentences.
    double mean_all(const NeuronId& id) const;

    std::uint64_t hash() const;

    bool operator==(const ExpertiseTable& o) const;

private:
    std::vector<NeuronStats> rows_;
    std::map<NeuronId, std::size_t> index_;
    std::size_t n_pos_ = 0, n_neg_ = 0;
};

ExpertiseTable build_table(const ActivationMatrix& acts);

// CSV export: layer,site,row,auroc,ap,gini,alpha,mean_pos,mean_neg,var_all
std::string table_to_csv(const ExpertiseTable& table);
void save_table_csv(const ExpertiseTable& table, const std::string& path);
// Class counts are not part of the CSV; pass them to recover mean_all.
ExpertiseTable parse_table_csv(std::string_view csv, std::size_t n_pos = 0, std::size_t n_neg = 0);
ExpertiseTable load_table_csv(const std::string& path, std::size_t n_pos = 0, std::size_t n_neg = 0);

// Full-precision binary cache keyed by the weights and corpus hashes.
struct TableCacheKey {
    std::uint64_t weights_hash = 0;
    std::uint64_t corpus_hash = 0;
    bool operator==(const TableCacheKey&) const = default;
};
void save_table_cache(const ExpertiseTable& table, const TableCacheKey& key, const std::string& path);
// nullopt when the file is absent or keyed differently.
std::optional<ExpertiseTable> load_table_cache(const std::string& path, const TableCacheKey& key);
// Reads the cache regardless of key, returning the stored key.
std::pair<ExpertiseTable, TableCacheKey> read_table_cache(const std::string& path);

void save_activations(const ActivationMatrix& acts, const std::string& path);
ActivationMatrix load_activations(const std::string& path);

}  // namespace aura
