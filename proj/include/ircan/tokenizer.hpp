#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ircan {

// Lookup-table tokenizer with greedy longest-match encoding.
//
// Tokens of the form `<...>` are special: they are never matched from text.
// `<eos>` marks end of sequence and `<0xHH>` tokens provide an optional byte
// fallback. Decoding concatenates token strings, so decode(encode(t)) == t for
// any text covered by the table.
class Tokenizer {
public:
    Tokenizer() : Tokenizer(std::vector<std::string>{}) {}
    explicit Tokenizer(std::vector<std::string> table);

    // Word-level table for a closed-vocabulary corpus: every word appears bare
    // and with a leading space, every punctuation character likewise.
    static Tokenizer from_corpus(std::string_view text);

    std::vector<int> encode(std::string_view text) const;
    std::string decode(std::span<const int> ids) const;

    int size() const noexcept { return static_cast<int>(table_.size()); }
    int eos() const noexcept { return eos_; }
    bool has_byte_fallback() const noexcept { return byte_fallback_; }
    const std::vector<std::string>& table() const noexcept { return table_; }
    const std::string& token(int id) const;
    int id_of(std::string_view token) const;  // -1 when absent

    friend bool operator==(const Tokenizer& a, const Tokenizer& b) { return a.table_ == b.table_; }

private:
    std::vector<std::string> table_;
    std::unordered_map<std::string, int> index_;
    int byte_ids_[256];
    int eos_ = -1;
    bool byte_fallback_ = false;
    std::size_t max_len_ = 0;
};

}  // namespace ircan
