//! Book chapters compiled as doctests (placeholder until book exists).
