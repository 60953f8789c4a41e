#include "cli.hpp"

int main(int argc, char** argv) { return mipslice::cli::run(argc, argv); }
