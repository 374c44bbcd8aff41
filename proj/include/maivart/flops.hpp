#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "maivart/common.hpp"

namespace maivart {

// Exact multiply-accumulate tally. Counts are integers, never estimates:
// a matrix product [m x k]*[k x n] contributes exactly m*n*k MACs. The total
// is monotone while a counter is installed and resets only on request.
//
// Counts are attributed to the innermost active FlopRegion label, falling
// back to the operation's own class name ("matmul") outside any region. The
// encoder labels its stages ("attention_scores", "attention_mix",
// "attention_proj", "mlp") so complexity growth per stage can be measured.
class FlopCounter {
public:
    void add(const std::string& op_class, std::uint64_t macs) {
        total_ += macs;
        by_class_[op_class] += macs;
    }

    std::uint64_t total() const { return total_; }

    std::uint64_t by_class(const std::string& op_class) const {
        auto it = by_class_.find(op_class);
        return it == by_class_.end() ? 0 : it->second;
    }

    const std::map<std::string, std::uint64_t>& breakdown() const { return by_class_; }

    void reset() {
        total_ = 0;
        by_class_.clear();
    }

    // Installs a counter for the current thread while in scope.
    class Scope {
    public:
        explicit Scope(FlopCounter& counter) : previous_(current_slot()) {
            current_slot() = &counter;
        }
        ~Scope() { current_slot() = previous_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        FlopCounter* previous_;
    };

    static FlopCounter* current() { return current_slot(); }

private:
    static FlopCounter*& current_slot() {
        thread_local FlopCounter* counter = nullptr;
        return counter;
    }

    std::uint64_t total_ = 0;
    std::map<std::string, std::uint64_t> by_class_;
};

// Labels MACs recorded while alive. Nested regions: innermost wins.
class FlopRegion {
public:
    explicit FlopRegion(std::string label) : previous_(current_slot()) {
        current_slot() = label_ = std::move(label);
    }
    ~FlopRegion() { current_slot() = previous_; }
    FlopRegion(const FlopRegion&) = delete;
    FlopRegion& operator=(const FlopRegion&) = delete;

    static std::string label_or(const std::string& fallback) {
        return current_slot().empty() ? fallback : current_slot();
    }

private:
    static std::string& current_slot() {
        thread_local std::string label;
        return label;
    }

    std::string label_;
    std::string previous_;
};

inline void count_macs(const std::string& op_class, std::uint64_t macs) {
    if (FlopCounter* c = FlopCounter::current()) {
        c->add(FlopRegion::label_or(op_class), macs);
    }
}

}  // namespace maivart
