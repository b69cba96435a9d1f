#include "aura/expertise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "aura/common.hpp"
#include "binio.hpp"

namespace aura {

namespace {

void check_labels(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t& n_pos,
                  std::size_t& n_neg) {
    if (scores.size() != labels.size()) fail(ErrorKind::ShapeMismatch, "scores and labels differ in length");
    n_pos = n_neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] > 1) fail(ErrorKind::BadLabel, "label at " + std::to_string(i) + " is not 0/1");
        if (!std::isfinite(scores[i])) fail(ErrorKind::DomainError, "non-finite score at " + std::to_string(i));
        (labels[i] ? n_pos : n_neg)++;
    }
    if (n_pos == 0 || n_neg == 0) fail(ErrorKind::OneClassOnly, "both classes must be present");
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return descending ? scores[a] > scores[b] : scores[a] < scores[b];
    });
    return idx;
}

}  // namespace

void ActivationMatrix::validate() const {
    if (values.size() != neurons.size() * labels.size()) fail(ErrorKind::ShapeMismatch, "activation matrix shape");
    if (labels.empty()) fail(ErrorKind::EmptyCorpus, "no sentences");
    std::size_t n_pos = 0;
    for (auto l : labels) {
        if (l > 1) fail(ErrorKind::BadLabel, "label not 0/1");
        n_pos += l;
    }
    if (n_pos == 0 || n_pos == labels.size()) fail(ErrorKind::OneClassOnly, "both classes must be present");
    for (float v : values) {
        if (!std::isfinite(v)) fail(ErrorKind::DomainError, "non-finite activation");
    }
}

ActivationMatrix capture(const ModelWeights& weights, const ConceptCorpus& corpus, const Tokenizer& tok,
                         std::span<const Site> sites) {
    if (corpus.size() == 0) fail(ErrorKind::EmptyCorpus, "nothing to capture");
    ActivationMatrix acts;
    acts.neurons = all_neurons(weights.cfg, sites);
    const std::size_t N = corpus.size(), M = acts.neurons.size();
    acts.labels.reserve(N);
    acts.values.assign(M * N, 0.0f);

    for (std::size_t i = 0; i < N; ++i) {
        const auto& s = corpus.sentences()[i];
        acts.labels.push_back(static_cast<std::uint8_t>(s.label));
        auto ids = tok.encode(s.text);
        if (ids.size() > weights.cfg.context_len) ids.resize(weights.cfg.context_len);
        const auto fr = forward(weights, ids, HookSet{}, sites);
        for (std::size_t m = 0; m < M; ++m) {
            float mx = -std::numeric_limits<float>::infinity();
            for (std::size_t t = 1; t < ids.size(); ++t) mx = std::max(mx, fr.captured.value(acts.neurons[m], t));
            acts.values[m * N + i] = mx;
        }
    }
    acts.validate();
    return acts;
}

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    std::size_t n_pos = 0, n_neg = 0;
    check_labels(scores, labels, n_pos, n_neg);
    // Average ranks (1-based) over tie blocks; rank sums stay exact in double.
    const auto idx = order_by_score(scores, false);
    double pos_rank_sum = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[idx[k]]) pos_rank_sum += avg_rank;
        }
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    std::size_t n_pos = 0, n_neg = 0;
    check_labels(scores, labels, n_pos, n_neg);
    const auto idx = order_by_score(scores, true);
    double ap = 0, prev_recall = 0;
    std::size_t tp = 0, seen = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            tp += labels[idx[j]];
            ++j;
        }
        seen = j;
        const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(seen);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

double gini_of(double auroc_value) {
    if (!(auroc_value >= 0.0 && auroc_value <= 1.0)) {
        fail(ErrorKind::DomainError, "auroc must lie in [0, 1], got " + fmt9(auroc_value));
    }
    return std::max(0.0, 2.0 * (auroc_value - 0.5));
}

double alpha_of(double auroc_value) { return 1.0 - gini_of(auroc_value); }

ExpertiseTable::ExpertiseTable(std::vector<NeuronStats> rows, std::size_t n_pos, std::size_t n_neg)
    : rows_(std::move(rows)), n_pos_(n_pos), n_neg_(n_neg) {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        if (!index_.emplace(rows_[i].id, i).second) fail(ErrorKind::DomainError, "duplicate neuron in table");
    }
}

const NeuronStats& ExpertiseTable::at(const NeuronId& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) {
        fail(ErrorKind::NeuronOutOfRange, "neuron " + std::to_string(id.layer) + "/" + std::string(site_name(id.site)) +
                                              "/" + std::to_string(id.row) + " not in table");
    }
    return rows_[it->second];
}

double ExpertiseTable::mean_all(const NeuronId& id) const {
    if (n_pos_ + n_neg_ == 0) fail(ErrorKind::DomainError, "table lacks class counts; overall mean unavailable");
    const auto& r = at(id);
    return (static_cast<double>(n_pos_) * r.mean_pos + static_cast<double>(n_neg_) * r.mean_neg) /
           static_cast<double>(n_pos_ + n_neg_);
}

std::uint64_t ExpertiseTable::hash() const {
    Hasher h;
    h.pod(static_cast<std::uint64_t>(n_pos_)).pod(static_cast<std::uint64_t>(n_neg_));
    for (const auto& r : rows_) {
        h.pod(r.id.layer).pod(r.id.site).pod(r.id.row);
        for (double v : {r.auroc, r.ap, r.gini, r.alpha, r.mean_pos, r.mean_neg, r.var_all}) h.pod(v);
    }
    return h.digest();
}

bool ExpertiseTable::operator==(const ExpertiseTable& o) const {
    if (n_pos_ != o.n_pos_ || n_neg_ != o.n_neg_ || rows_.size() != o.rows_.size()) return false;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        const auto &a = rows_[i], &b = o.rows_[i];
        if (!(a.id == b.id && a.auroc == b.auroc && a.ap == b.ap && a.gini == b.gini && a.alpha == b.alpha &&
              a.mean_pos == b.mean_pos && a.mean_neg == b.mean_neg && a.var_all == b.var_all)) {
            return false;
        }
    }
    return true;
}

ExpertiseTable build_table(const ActivationMatrix& acts) {
    acts.validate();
    const std::size_t N = acts.n_sentences();
    std::size_t n_pos = 0;
    for (auto l : acts.labels) n_pos += l;
    const std::size_t n_neg = N - n_pos;

    std::vector<NeuronStats> rows;
    rows.reserve(acts.n_neurons());
    std::vector<double> col(N);
    for (std::size_t m = 0; m < acts.n_neurons(); ++m) {
        const auto src = acts.column_of(m);
        std::copy(src.begin(), src.end(), col.begin());
        NeuronStats s;
        s.id = acts.neurons[m];
        s.auroc = auroc(col, acts.labels);
        s.ap = average_precision(col, acts.labels);
        s.gini = gini_of(s.auroc);
        s.alpha = alpha_of(s.auroc);
        double sum_pos = 0, sum_neg = 0;
        for (std::size_t i = 0; i < N; ++i) (acts.labels[i] ? sum_pos : sum_neg) += col[i];
        s.mean_pos = sum_pos / static_cast<double>(n_pos);
        s.mean_neg = sum_neg / static_cast<double>(n_neg);
        const double mean = (sum_pos + sum_neg) / static_cast<double>(N);
        double var = 0;
        for (double v : col) var += (v - mean) * (v - mean);
        s.var_all = var / static_cast<double>(N);
        rows.push_back(s);
    }
    return ExpertiseTable(std::move(rows), n_pos, n_neg);
}

// ---------------------------------------------------------------------------

std::string table_to_csv(const ExpertiseTable& table) {
    std::string out = "layer,site,row,auroc,ap,gini,alpha,mean_pos,mean_neg,var_all\n";
    for (const auto& r : table.rows()) {
        out += std::to_string(r.id.layer) + ',' + std::string(site_name(r.id.site)) + ',' + std::to_string(r.id.row);
        for (double v : {r.auroc, r.ap, r.gini, r.alpha, r.mean_pos, r.mean_neg, r.var_all}) {
            out += ',';
            out += fmt9(v);
        }
        out += '\n';
    }
    return out;
}

void save_table_csv(const ExpertiseTable& table, const std::string& path) {
    write_file_atomic(path, table_to_csv(table));
}

ExpertiseTable parse_table_csv(std::string_view csv, std::size_t n_pos, std::size_t n_neg) {
    std::istringstream in{std::string(csv)};
    std::string line;
    if (!std::getline(in, line) || line != "layer,site,row,auroc,ap,gini,alpha,mean_pos,mean_neg,var_all") {
        fail(ErrorKind::ParseError, "expertise CSV header mismatch");
    }
    std::vector<NeuronStats> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() != 10) fail(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": expected 10 fields");
        try {
            NeuronStats s;
            s.id = {static_cast<std::uint32_t>(std::stoul(f[0])), parse_site(f[1]),
                    static_cast<std::uint32_t>(std::stoul(f[2]))};
            double* dst[] = {&s.auroc, &s.ap, &s.gini, &s.alpha, &s.mean_pos, &s.mean_neg, &s.var_all};
            for (std::size_t k = 0; k < 7; ++k) *dst[k] = std::stod(f[3 + k]);
            rows.push_back(s);
        } catch (const std::logic_error&) {
            fail(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": bad number");
        }
    }
    return ExpertiseTable(std::move(rows), n_pos, n_neg);
}

ExpertiseTable load_table_csv(const std::string& path, std::size_t n_pos, std::size_t n_neg) {
    return parse_table_csv(read_file(path), n_pos, n_neg);
}

namespace {
constexpr std::string_view kTableMagic = "AXT1";
constexpr std::string_view kActsMagic = "AXA1";
}  // namespace

void save_table_cache(const ExpertiseTable& table, const TableCacheKey& key, const std::string& path) {
    detail::ByteWriter w;
    w.raw(kTableMagic);
    w.u64(key.weights_hash);
    w.u64(key.corpus_hash);
    w.u64(table.n_pos());
    w.u64(table.n_neg());
    w.u64(table.size());
    for (const auto& r : table.rows()) {
        w.u32(r.id.layer);
        w.u8(static_cast<std::uint8_t>(r.id.site));
        w.u32(r.id.row);
        for (double v : {r.auroc, r.ap, r.gini, r.alpha, r.mean_pos, r.mean_neg, r.var_all}) w.f64(v);
    }
    write_file_atomic(path, w.str());
}

std::pair<ExpertiseTable, TableCacheKey> read_table_cache(const std::string& path) {
    const std::string bytes = read_file(path);
    detail::ByteReader r(bytes);
    if (r.take(4) != kTableMagic) fail(ErrorKind::BadMagic, path + " is not an expertise cache");
    TableCacheKey key;
    key.weights_hash = r.u64();
    key.corpus_hash = r.u64();
    const auto n_pos = r.u64(), n_neg = r.u64(), m = r.u64();
    std::vector<NeuronStats> rows(m);
    for (auto& s : rows) {
        s.id.layer = r.u32();
        const auto site = r.u8();
        if (site > 1) fail(ErrorKind::ParseError, "bad site code in cache");
        s.id.site = static_cast<Site>(site);
        s.id.row = r.u32();
        for (double* d : {&s.auroc, &s.ap, &s.gini, &s.alpha, &s.mean_pos, &s.mean_neg, &s.var_all}) *d = r.f64();
    }
    return {ExpertiseTable(std::move(rows), n_pos, n_neg), key};
}

std::optional<ExpertiseTable> load_table_cache(const std::string& path, const TableCacheKey& key) {
    if (!std::ifstream(path)) return std::nullopt;
    auto [table, stored] = read_table_cache(path);
    if (!(stored == key)) return std::nullopt;
    return std::move(table);
}

void save_activations(const ActivationMatrix& acts, const std::string& path) {
    detail::ByteWriter w;
    w.raw(kActsMagic);
    w.u64(acts.n_neurons());
    w.u64(acts.n_sentences());
    for (const auto& id : acts.neurons) {
        w.u32(id.layer);
        w.u8(static_cast<std::uint8_t>(id.site));
        w.u32(id.row);
    }
    for (auto l : acts.labels) w.u8(l);
    for (float v : acts.values) w.f32(v);
    write_file_atomic(path, w.str());
}

ActivationMatrix load_activations(const std::string& path) {
    const std::string bytes = read_file(path);
    detail::ByteReader r(bytes);
    if (r.take(4) != kActsMagic) fail(ErrorKind::BadMagic, path + " is not an activation matrix");
    ActivationMatrix acts;
    const auto m = r.u64(), n = r.u64();
    acts.neurons.resize(m);
    for (auto& id : acts.neurons) {
        id.layer = r.u32();
        const auto site = r.u8();
        if (site > 1) fail(ErrorKind::ParseError, "bad site code");
        id.site = static_cast<Site>(site);
        id.row = r.u32();
    }
    acts.labels.resize(n);
    for (auto& l : acts.labels) l = r.u8();
    acts.values.resize(m * n);
    for (auto& v : acts.values) v = r.f32();
    acts.validate();
    return acts;
}

}  // namespace aura
