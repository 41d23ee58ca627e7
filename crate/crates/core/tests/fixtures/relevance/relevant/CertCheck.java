/* certificate helpers */
import java.security.cert.X509Certificate;

class CertCheck {
    boolean expired(X509Certificate c) { return false; }
}
