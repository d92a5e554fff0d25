#include <iostream>

#include "svcurve/io.hpp"

// Writes the standard 5x7 quote grid priced by a model, as quote CSV on stdout.
int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: make_sample_quotes model.json [curve.csv]\n";
        return 2;
    }
    try {
        const auto m = svcurve::io::load_model(argv[1]);
        const auto curve = argc > 2 ? svcurve::io::load_curve(argv[2]) : svcurve::FuturesCurve::flat(100.0);
        std::cout << svcurve::io::quotes_to_csv(svcurve::synthetic_quotes(m, curve));
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    return 0;
}
