#include "efld/cli.hpp"

int main(int argc, char** argv) { return efld::cli::run(argc, argv); }
