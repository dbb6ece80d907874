use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;

use super::SparseCountMatrix;
use crate::error::{Error, Result};

const MM_HEADER: &str = "%%MatrixMarket matrix coordinate integer general";

/// Opens a text file, decompressing it when the name ends in `.gz`.
pub fn open_text(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let inner: Box<dyn Read> = if path.extension().is_some_and(|ext| ext == "gz") {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(inner)))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads a one-id-per-line file; extra tab-separated columns are ignored.
pub fn read_id_file(path: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for (n, line) in open_text(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let id = line.split('\t').next().unwrap_or_default().trim();
        if id.is_empty() {
            return Err(Error::parse(path, n + 1, "empty identifier"));
        }
        ids.push(id.to_string());
    }
    Ok(ids)
}

/// Loads a MatrixMarket coordinate matrix (genes as rows, cells as columns)
/// together with its gene and barcode files. Gzipped inputs are accepted
/// when the file name ends in `.gz`.
pub fn load_sparse_matrix(
    matrix_path: &Path,
    gene_path: &Path,
    barcode_path: &Path,
) -> Result<SparseCountMatrix> {
    let (n_rows, n_cols, triplets) = read_matrix_market(matrix_path)?;
    let gene_ids = read_id_file(gene_path)?;
    let cell_ids = read_id_file(barcode_path)?;
    if gene_ids.len() != n_rows {
        return Err(Error::DimensionMismatch(format!(
            "{} declares {n_rows} genes but {} lists {}",
            matrix_path.display(),
            gene_path.display(),
            gene_ids.len()
        )));
    }
    if cell_ids.len() != n_cols {
        return Err(Error::DimensionMismatch(format!(
            "{} declares {n_cols} cells but {} lists {}",
            matrix_path.display(),
            barcode_path.display(),
            cell_ids.len()
        )));
    }
    SparseCountMatrix::from_triplets(gene_ids, cell_ids, triplets)
}

type Triplets = Vec<(usize, usize, u32)>;

fn read_matrix_market(path: &Path) -> Result<(usize, usize, Triplets)> {
    let mut lines = open_text(path)?.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "empty file")),
    };
    let banner: Vec<String> = header
        .split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect();
    if banner.len() != 5
        || banner[0] != "%%matrixmarket"
        || banner[1] != "matrix"
        || banner[2] != "coordinate"
        || banner[3] != "integer"
        || banner[4] != "general"
    {
        return Err(Error::parse(
            path,
            1,
            format!("expected `{MM_HEADER}`, found `{}`", header.trim()),
        ));
    }

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    let mut seen = 0usize;
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = n + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, line_no, "expected three fields"));
        }
        match size {
            None => {
                let parse = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| Error::parse(path, line_no, format!("bad size field `{s}`")))
                };
                size = Some((parse(fields[0])?, parse(fields[1])?, parse(fields[2])?));
                triplets.reserve(size.unwrap().2);
            }
            Some((rows, cols, _)) => {
                let index = |s: &str, bound: usize, what: &str| -> Result<usize> {
                    let v = s.parse::<usize>().map_err(|_| {
                        Error::parse(path, line_no, format!("bad {what} index `{s}`"))
                    })?;
                    if v == 0 || v > bound {
                        return Err(Error::DimensionMismatch(format!(
                            "{}:{line_no}: {what} index {v} outside 1..={bound}",
                            path.display()
                        )));
                    }
                    Ok(v - 1)
                };
                let g = index(fields[0], rows, "row")?;
                let c = index(fields[1], cols, "column")?;
                let x = parse_count(fields[2])
                    .map_err(|msg| Error::parse(path, line_no, msg))?;
                triplets.push((g, c, x));
                seen += 1;
            }
        }
    }
    let (rows, cols, nnz) = size.ok_or_else(|| Error::parse(path, 2, "missing size line"))?;
    if seen != nnz {
        return Err(Error::DimensionMismatch(format!(
            "{} declares {nnz} entries but contains {seen}",
            path.display()
        )));
    }
    Ok((rows, cols, triplets))
}

fn parse_count(s: &str) -> std::result::Result<u32, String> {
    if s.starts_with('-') {
        return Err(format!("negative count `{s}`"));
    }
    s.parse::<u32>()
        .map_err(|_| format!("count `{s}` is not a non-negative integer"))
}

/// Loads a dense tab-separated table: the first row holds cell ids (with or
/// without a leading corner field), the first column gene ids.
pub fn load_dense_tsv(path: &Path) -> Result<SparseCountMatrix> {
    let mut lines = open_text(path)?.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) => {
                let l = l.map_err(|e| Error::io(path, e))?;
                if !l.trim().is_empty() {
                    break l;
                }
            }
            None => return Err(Error::parse(path, 1, "empty file")),
        }
    };
    let header: Vec<String> = header
        .trim_end_matches('\r')
        .split('\t')
        .map(|s| s.trim().to_string())
        .collect();

    let mut gene_ids = Vec::new();
    let mut rows: Vec<Vec<u32>> = Vec::new();
    let mut cell_ids: Option<Vec<String>> = None;
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let line_no = n + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let ids = cell_ids.get_or_insert_with(|| {
            if fields.len() == header.len() + 1 {
                header.clone()
            } else {
                header[1..].to_vec()
            }
        });
        if fields.len() != ids.len() + 1 {
            return Err(Error::parse(
                path,
                line_no,
                format!(
                    "ragged row: {} fields, expected {}",
                    fields.len(),
                    ids.len() + 1
                ),
            ));
        }
        gene_ids.push(fields[0].trim().to_string());
        let row = fields[1..]
            .iter()
            .map(|s| parse_count(s.trim()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|msg| Error::parse(path, line_no, msg))?;
        rows.push(row);
    }
    let cell_ids = cell_ids.unwrap_or_else(|| header[1..].to_vec());
    SparseCountMatrix::from_dense(gene_ids, cell_ids, &rows)
}

pub fn write_id_file<W: Write>(ids: &[String], mut w: W) -> std::io::Result<()> {
    for id in ids {
        writeln!(w, "{id}")?;
    }
    w.flush()
}

/// Writes the matrix in MatrixMarket coordinate format, cell-major.
pub fn write_matrix_market<W: Write>(m: &SparseCountMatrix, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{MM_HEADER}")?;
    writeln!(w, "{} {} {}", m.n_genes(), m.n_cells(), m.nnz())?;
    for (g, c, x) in m.entries() {
        writeln!(w, "{} {} {x}", g + 1, c + 1)?;
    }
    w.flush()
}

/// Writes the dense table with an empty corner field.
pub fn write_dense_tsv<W: Write>(m: &SparseCountMatrix, mut w: W) -> std::io::Result<()> {
    for id in m.cell_ids() {
        write!(w, "\t{id}")?;
    }
    writeln!(w)?;
    let mut row = vec![0u32; m.n_cells()];
    for g in 0..m.n_genes() {
        row.iter_mut().for_each(|x| *x = 0);
        for (c, x) in m.gene(g).iter() {
            row[c] = x;
        }
        write!(w, "{}", m.gene_ids()[g])?;
        for x in &row {
            write!(w, "\t{x}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// Writes `matrix.mtx`, `genes.tsv` and `barcodes.tsv` into `dir`, returning
/// the three paths.
pub fn write_sparse_bundle(m: &SparseCountMatrix, dir: &Path) -> Result<[PathBuf; 3]> {
    let matrix = dir.join("matrix.mtx");
    let genes = dir.join("genes.tsv");
    let barcodes = dir.join("barcodes.tsv");
    write_matrix_market(m, create(&matrix)?).map_err(|e| Error::io(&matrix, e))?;
    write_id_file(m.gene_ids(), create(&genes)?).map_err(|e| Error::io(&genes, e))?;
    write_id_file(m.cell_ids(), create(&barcodes)?).map_err(|e| Error::io(&barcodes, e))?;
    Ok([matrix, genes, barcodes])
}
